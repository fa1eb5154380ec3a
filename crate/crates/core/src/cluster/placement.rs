//! Pure placement decisions over a committed configuration.

use std::collections::BTreeMap;

use super::config::{ClusterConfig, Health, Role};
use crate::log::TopicId;
use crate::sim::NodeId;

fn up_nodes(config: &ClusterConfig) -> impl Iterator<Item = (&NodeId, Role)> {
    config
        .membership
        .values()
        .filter(|d| d.status == Health::Up && d.cluster == config.cluster)
        .map(|d| (&d.node_id, d.role))
}

fn stage_load<'a>(config: &'a ClusterConfig, exclude: &str) -> BTreeMap<&'a str, usize> {
    let mut load = BTreeMap::new();
    for (stage, node) in &config.placements {
        if let Some(n) = node {
            if stage != exclude {
                *load.entry(n.as_str()).or_insert(0) += 1;
            }
        }
    }
    load
}

fn replica_load(config: &ClusterConfig) -> BTreeMap<&str, usize> {
    let mut load = BTreeMap::new();
    for t in config.topics.values() {
        for r in &t.replicas {
            *load.entry(r.as_str()).or_insert(0) += 1;
        }
    }
    load
}

/// Node for `stage`: an up node admitted by the stage's affinity, workers
/// before masters, then fewest placed stages, then lowest id. `None` leaves
/// the stage pending.
pub fn schedule_stage(config: &ClusterConfig, stage: &str) -> Option<NodeId> {
    let spec = &config.stages.get(stage)?.spec;
    if !spec.affinity.admits(config.cluster) {
        return None;
    }
    let load = stage_load(config, stage);
    up_nodes(config)
        .min_by_key(|(n, role)| {
            (
                *role != Role::Worker,
                load.get(n.as_str()).copied().unwrap_or(0),
                (*n).clone(),
            )
        })
        .map(|(n, _)| n.clone())
}

/// Replica set and initial leader for a new topic: workers first, then
/// nodes holding the fewest replicas, then lowest id. The leader is a
/// chosen worker leading the fewest topics, a master only if no worker is
/// among the replicas.
pub fn place_replicas(config: &ClusterConfig, rf: usize) -> Option<(Vec<NodeId>, NodeId)> {
    let load = replica_load(config);
    let mut nodes: Vec<_> = up_nodes(config).collect();
    nodes.sort_by_key(|(n, role)| {
        (
            *role != Role::Worker,
            load.get(n.as_str()).copied().unwrap_or(0),
            (*n).clone(),
        )
    });
    if nodes.len() < rf || rf == 0 {
        return None;
    }
    let chosen = &nodes[..rf];
    let mut led: BTreeMap<&str, usize> = BTreeMap::new();
    for t in config.topics.values() {
        if let Some(l) = &t.leader {
            *led.entry(l.as_str()).or_insert(0) += 1;
        }
    }
    // Leaders stay off masters when possible so losing the config quorum
    // does not also strand topic leadership.
    let leader = chosen
        .iter()
        .min_by_key(|(n, role)| {
            (
                *role != Role::Worker,
                led.get(n.as_str()).copied().unwrap_or(0),
                (*n).clone(),
            )
        })
        .map(|(n, _)| (*n).clone())?;
    let replicas = chosen.iter().map(|(n, _)| (*n).clone()).collect();
    Some((replicas, leader))
}

/// Up node to take over a lost replica of `topic`, by the same preference
/// as [`place_replicas`].
pub fn replacement_replica(config: &ClusterConfig, topic: &TopicId) -> Option<NodeId> {
    let current = &config.topics.get(topic)?.replicas;
    let load = replica_load(config);
    up_nodes(config)
        .filter(|(n, _)| !current.contains(n))
        .min_by_key(|(n, role)| {
            (
                *role != Role::Worker,
                load.get(n.as_str()).copied().unwrap_or(0),
                (*n).clone(),
            )
        })
        .map(|(n, _)| n.clone())
}
