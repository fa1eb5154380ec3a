use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{TopicAssignment, TopicId};
use crate::pipeline::{StageId, StageSpec};
use crate::sim::{Cluster, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Master,
    Worker,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Master => "master",
            Role::Worker => "worker",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "master" => Ok(Role::Master),
            "worker" => Ok(Role::Worker),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Health {
    Up,
    Suspected,
    Failed,
}

impl Health {
    pub fn as_str(self) -> &'static str {
        match self {
            Health::Up => "up",
            Health::Suspected => "suspected",
            Health::Failed => "failed",
        }
    }

    /// Allowed transitions: up -> suspected -> failed -> up, suspected -> up.
    pub fn can_become(self, next: Health) -> bool {
        matches!(
            (self, next),
            (Health::Up, Health::Suspected)
                | (Health::Suspected, Health::Failed)
                | (Health::Suspected, Health::Up)
                | (Health::Failed, Health::Up)
        )
    }
}

impl fmt::Display for Health {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: NodeId,
    pub cluster: Cluster,
    pub role: Role,
    pub status: Health,
}

/// A stage as deployed: its wiring, the consumer group it reads with, and
/// where a fresh group starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeployedStage {
    pub spec: StageSpec,
    pub group: String,
    pub start_offset: u64,
}

impl DeployedStage {
    pub fn new(spec: StageSpec) -> Self {
        let group = spec.stage_id.clone();
        DeployedStage {
            spec,
            group,
            start_offset: 0,
        }
    }
}

/// Commands replicated through the configuration log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigCommand {
    /// Appended by every new leader; commits prove the leader is operational.
    Noop { leader: NodeId },
    Bootstrap { stages: Vec<DeployedStage> },
    SetNodeStatus { node: NodeId, status: Health },
    CreateTopic {
        topic: TopicId,
        rf: usize,
        replicas: Vec<NodeId>,
        leader: NodeId,
    },
    SetTopicLeader {
        topic: TopicId,
        leader: NodeId,
        leader_epoch: u64,
    },
    ReassignReplica {
        topic: TopicId,
        old: NodeId,
        new: NodeId,
    },
    PlaceStage { stage: StageId, node: Option<NodeId> },
    Rewire {
        upserts: Vec<DeployedStage>,
        removes: Vec<StageId>,
    },
}

impl ConfigCommand {
    pub fn kind_byte(&self) -> u8 {
        match self {
            ConfigCommand::Noop { .. } => 0,
            ConfigCommand::Bootstrap { .. } => 1,
            ConfigCommand::SetNodeStatus { .. } => 2,
            ConfigCommand::CreateTopic { .. } => 3,
            ConfigCommand::SetTopicLeader { .. } => 4,
            ConfigCommand::ReassignReplica { .. } => 5,
            ConfigCommand::PlaceStage { .. } => 6,
            ConfigCommand::Rewire { .. } => 7,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ConfigCommand::Noop { .. } => "noop",
            ConfigCommand::Bootstrap { .. } => "bootstrap",
            ConfigCommand::SetNodeStatus { .. } => "node_status",
            ConfigCommand::CreateTopic { .. } => "create_topic",
            ConfigCommand::SetTopicLeader { .. } => "topic_leader",
            ConfigCommand::ReassignReplica { .. } => "reassign_replica",
            ConfigCommand::PlaceStage { .. } => "place_stage",
            ConfigCommand::Rewire { .. } => "rewire",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("topic {0} already exists")]
    DuplicateTopic(TopicId),
    #[error("topic {topic}: placement has {got} nodes, replication factor is {rf}")]
    PlacementTooSmall { topic: TopicId, rf: usize, got: usize },
    #[error("topic {0}: placement nodes are not distinct")]
    PlacementNotDistinct(TopicId),
    #[error("node {0} is not an up member of this cluster")]
    NodeNotEligible(NodeId),
    #[error("unknown topic {0}")]
    UnknownTopic(TopicId),
    #[error("unknown stage {0}")]
    UnknownStage(StageId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node}: status {from} cannot become {to}")]
    BadTransition { node: NodeId, from: Health, to: Health },
    #[error("topic {topic}: {node} is not a replica")]
    NotReplica { topic: TopicId, node: NodeId },
    #[error("topic {topic}: {node} already holds a replica")]
    AlreadyReplica { topic: TopicId, node: NodeId },
    #[error("topic {topic}: leader epoch {epoch} is not newer")]
    StaleLeaderEpoch { topic: TopicId, epoch: u64 },
}

/// Desired and observed state of one cluster, as committed through the
/// configuration log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub cluster: Cluster,
    pub epoch: u64,
    pub bootstrapped: bool,
    pub membership: BTreeMap<NodeId, NodeDescriptor>,
    pub topics: BTreeMap<TopicId, TopicAssignment>,
    pub stages: BTreeMap<StageId, DeployedStage>,
    /// `None` marks a stage that has no eligible node.
    pub placements: BTreeMap<StageId, Option<NodeId>>,
}

impl ClusterConfig {
    pub fn initial(cluster: Cluster, membership: impl IntoIterator<Item = NodeDescriptor>) -> Self {
        ClusterConfig {
            cluster,
            epoch: 0,
            bootstrapped: false,
            membership: membership
                .into_iter()
                .map(|d| (d.node_id.clone(), d))
                .collect(),
            topics: BTreeMap::new(),
            stages: BTreeMap::new(),
            placements: BTreeMap::new(),
        }
    }

    pub fn status(&self, node: &str) -> Option<Health> {
        self.membership.get(node).map(|d| d.status)
    }

    pub fn is_up(&self, node: &str) -> bool {
        self.status(node) == Some(Health::Up)
    }

    pub fn masters(&self) -> impl Iterator<Item = &NodeId> {
        self.membership
            .values()
            .filter(|d| d.role == Role::Master)
            .map(|d| &d.node_id)
    }

    pub fn placement(&self, stage: &str) -> Option<&NodeId> {
        self.placements.get(stage).and_then(Option::as_ref)
    }

    pub fn stages_on<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a DeployedStage> + 'a {
        self.placements
            .iter()
            .filter(move |(_, n)| n.as_deref() == Some(node))
            .filter_map(|(s, _)| self.stages.get(s))
    }

    /// Applies one committed command. The epoch advances whether or not the
    /// command was valid; invalid commands leave the rest unchanged.
    pub fn apply(&mut self, cmd: &ConfigCommand) -> Result<(), ConfigError> {
        self.epoch += 1;
        self.apply_inner(cmd)
    }

    fn apply_inner(&mut self, cmd: &ConfigCommand) -> Result<(), ConfigError> {
        match cmd {
            ConfigCommand::Noop { .. } => Ok(()),
            ConfigCommand::Bootstrap { stages } => {
                if !self.bootstrapped {
                    for s in stages {
                        self.stages.insert(s.spec.stage_id.clone(), s.clone());
                        self.placements.entry(s.spec.stage_id.clone()).or_insert(None);
                    }
                    self.bootstrapped = true;
                }
                Ok(())
            }
            ConfigCommand::SetNodeStatus { node, status } => {
                let d = self
                    .membership
                    .get_mut(node)
                    .ok_or_else(|| ConfigError::UnknownNode(node.clone()))?;
                if !d.status.can_become(*status) {
                    return Err(ConfigError::BadTransition {
                        node: node.clone(),
                        from: d.status,
                        to: *status,
                    });
                }
                d.status = *status;
                Ok(())
            }
            ConfigCommand::CreateTopic {
                topic,
                rf,
                replicas,
                leader,
            } => {
                self.check_create_topic(topic, *rf, replicas)?;
                if !replicas.contains(leader) {
                    return Err(ConfigError::NotReplica {
                        topic: topic.clone(),
                        node: leader.clone(),
                    });
                }
                self.topics.insert(
                    topic.clone(),
                    TopicAssignment {
                        rf: *rf,
                        replicas: replicas.clone(),
                        leader: Some(leader.clone()),
                        leader_epoch: 1,
                    },
                );
                Ok(())
            }
            ConfigCommand::SetTopicLeader {
                topic,
                leader,
                leader_epoch,
            } => {
                let t = self
                    .topics
                    .get_mut(topic)
                    .ok_or_else(|| ConfigError::UnknownTopic(topic.clone()))?;
                if !t.replicas.contains(leader) {
                    return Err(ConfigError::NotReplica {
                        topic: topic.clone(),
                        node: leader.clone(),
                    });
                }
                if *leader_epoch <= t.leader_epoch {
                    return Err(ConfigError::StaleLeaderEpoch {
                        topic: topic.clone(),
                        epoch: *leader_epoch,
                    });
                }
                t.leader = Some(leader.clone());
                t.leader_epoch = *leader_epoch;
                Ok(())
            }
            ConfigCommand::ReassignReplica { topic, old, new } => {
                if !self.membership.contains_key(new) {
                    return Err(ConfigError::UnknownNode(new.clone()));
                }
                let t = self
                    .topics
                    .get_mut(topic)
                    .ok_or_else(|| ConfigError::UnknownTopic(topic.clone()))?;
                if t.replicas.contains(new) {
                    return Err(ConfigError::AlreadyReplica {
                        topic: topic.clone(),
                        node: new.clone(),
                    });
                }
                let slot = t
                    .replicas
                    .iter_mut()
                    .find(|r| *r == old)
                    .ok_or_else(|| ConfigError::NotReplica {
                        topic: topic.clone(),
                        node: old.clone(),
                    })?;
                *slot = new.clone();
                if t.leader.as_ref() == Some(old) {
                    t.leader = None;
                }
                Ok(())
            }
            ConfigCommand::PlaceStage { stage, node } => {
                if !self.stages.contains_key(stage) {
                    return Err(ConfigError::UnknownStage(stage.clone()));
                }
                if let Some(n) = node {
                    if !self.membership.contains_key(n) {
                        return Err(ConfigError::UnknownNode(n.clone()));
                    }
                }
                self.placements.insert(stage.clone(), node.clone());
                Ok(())
            }
            ConfigCommand::Rewire { upserts, removes } => {
                for s in removes {
                    self.stages.remove(s);
                    self.placements.remove(s);
                }
                for s in upserts {
                    let id = s.spec.stage_id.clone();
                    // Rewired stages are stopped and placed afresh.
                    self.stages.insert(id.clone(), s.clone());
                    self.placements.insert(id, None);
                }
                Ok(())
            }
        }
    }

    /// Validation for a new topic placement.
    pub fn check_create_topic(
        &self,
        topic: &TopicId,
        rf: usize,
        replicas: &[NodeId],
    ) -> Result<(), ConfigError> {
        if self.topics.contains_key(topic) {
            return Err(ConfigError::DuplicateTopic(topic.clone()));
        }
        if replicas.len() < rf || rf == 0 {
            return Err(ConfigError::PlacementTooSmall {
                topic: topic.clone(),
                rf,
                got: replicas.len(),
            });
        }
        let distinct: std::collections::BTreeSet<_> = replicas.iter().collect();
        if distinct.len() != replicas.len() {
            return Err(ConfigError::PlacementNotDistinct(topic.clone()));
        }
        for r in replicas {
            if !self.is_up(r) {
                return Err(ConfigError::NodeNotEligible(r.clone()));
            }
        }
        Ok(())
    }
}

/// One entry of the configuration log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEntry {
    /// Position in the log, 1-based; equals the epoch once committed.
    pub epoch: u64,
    pub term: u64,
    pub cmd: ConfigCommand,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntryDecodeError {
    #[error("truncated config entry at byte {0}")]
    Truncated(usize),
    #[error("config entry at byte {at}: {message}")]
    BadPayload { at: usize, message: String },
}

/// Appends `epoch(8) | term(8) | cmd_kind(1) | payload_len(4) | payload`,
/// all big-endian, the payload being the command as JSON.
pub fn encode_entry(e: &ConfigEntry, out: &mut Vec<u8>) {
    let payload = serde_json::to_vec(&e.cmd).unwrap();
    out.extend_from_slice(&e.epoch.to_be_bytes());
    out.extend_from_slice(&e.term.to_be_bytes());
    out.push(e.cmd.kind_byte());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<ConfigEntry>, EntryDecodeError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let at = pos;
        let header = bytes
            .get(pos..pos + 21)
            .ok_or(EntryDecodeError::Truncated(at))?;
        let epoch = u64::from_be_bytes(header[0..8].try_into().unwrap());
        let term = u64::from_be_bytes(header[8..16].try_into().unwrap());
        let kind = header[16];
        let len = u32::from_be_bytes(header[17..21].try_into().unwrap()) as usize;
        let payload = bytes
            .get(pos + 21..pos + 21 + len)
            .ok_or(EntryDecodeError::Truncated(at))?;
        let cmd: ConfigCommand =
            serde_json::from_slice(payload).map_err(|e| EntryDecodeError::BadPayload {
                at,
                message: e.to_string(),
            })?;
        if cmd.kind_byte() != kind {
            return Err(EntryDecodeError::BadPayload {
                at,
                message: format!("kind byte {kind} does not match {}", cmd.name()),
            });
        }
        out.push(ConfigEntry { epoch, term, cmd });
        pos += 21 + len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ClusterConfig {
        ClusterConfig::initial(
            Cluster::Edge,
            ["EN-1", "EN-2", "EN-3"].map(|n| NodeDescriptor {
                node_id: n.into(),
                cluster: Cluster::Edge,
                role: Role::Master,
                status: Health::Up,
            }),
        )
    }

    fn create(topic: &str, rf: usize, replicas: &[&str]) -> ConfigCommand {
        ConfigCommand::CreateTopic {
            topic: TopicId::new(topic),
            rf,
            replicas: replicas.iter().map(|s| s.to_string()).collect(),
            leader: replicas[0].to_string(),
        }
    }

    #[test]
    fn create_topic_and_duplicate() {
        let mut c = config();
        c.apply(&create("ET-1", 3, &["EN-1", "EN-2", "EN-3"])).unwrap();
        assert_eq!(c.epoch, 1);
        assert_eq!(
            c.apply(&create("ET-1", 3, &["EN-1", "EN-2", "EN-3"])),
            Err(ConfigError::DuplicateTopic(TopicId::new("ET-1")))
        );
        assert_eq!(c.epoch, 2);
    }

    #[test]
    fn single_copy_topic_is_allowed() {
        let mut c = config();
        c.apply(&create("ET-9", 1, &["EN-2"])).unwrap();
        assert_eq!(c.topics[&TopicId::new("ET-9")].replicas, vec!["EN-2".to_string()]);
    }

    #[test]
    fn placement_smaller_than_rf_rejected() {
        let c = config();
        assert!(matches!(
            c.check_create_topic(&TopicId::new("ET-1"), 3, &["EN-1".into()]),
            Err(ConfigError::PlacementTooSmall { .. })
        ));
    }

    #[test]
    fn status_transitions_follow_the_lifecycle() {
        let mut c = config();
        let set = |s| ConfigCommand::SetNodeStatus { node: "EN-3".into(), status: s };
        assert!(c.apply(&set(Health::Failed)).is_err());
        c.apply(&set(Health::Suspected)).unwrap();
        c.apply(&set(Health::Failed)).unwrap();
        c.apply(&set(Health::Up)).unwrap();
        assert!(c.is_up("EN-3"));
    }

    #[test]
    fn reassign_replaces_slot() {
        let mut c = config();
        c.membership.insert(
            "EN-4".into(),
            NodeDescriptor {
                node_id: "EN-4".into(),
                cluster: Cluster::Edge,
                role: Role::Worker,
                status: Health::Up,
            },
        );
        c.apply(&create("ET-1", 3, &["EN-1", "EN-2", "EN-3"])).unwrap();
        let cmd = ConfigCommand::ReassignReplica {
            topic: TopicId::new("ET-1"),
            old: "EN-3".into(),
            new: "EN-4".into(),
        };
        c.apply(&cmd).unwrap();
        assert_eq!(c.topics[&TopicId::new("ET-1")].replicas, ["EN-1", "EN-2", "EN-4"]);
        assert!(matches!(c.apply(&cmd), Err(ConfigError::AlreadyReplica { .. })));
    }

    #[test]
    fn entry_codec_round_trip() {
        let entries = vec![
            ConfigEntry { epoch: 1, term: 1, cmd: ConfigCommand::Noop { leader: "EN-1".into() } },
            ConfigEntry {
                epoch: 2,
                term: 1,
                cmd: ConfigCommand::PlaceStage { stage: "PC-3".into(), node: Some("EN-1".into()) },
            },
        ];
        let mut bytes = Vec::new();
        for e in &entries {
            encode_entry(e, &mut bytes);
        }
        assert_eq!(&bytes[0..8], &1u64.to_be_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_be_bytes());
        assert_eq!(bytes[16], 0);
        assert_eq!(decode_entries(&bytes).unwrap(), entries);
        assert!(matches!(
            decode_entries(&bytes[..bytes.len() - 1]),
            Err(EntryDecodeError::Truncated(_))
        ));
    }
}
