use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::config::{ClusterConfig, ConfigCommand, DeployedStage, Health};
use super::placement::{place_replicas, replacement_replica, schedule_stage};
use super::raft::{ConfigStore, ProposeError, RaftParams};
use crate::log::{choose_leader, LogMsg, TopicId};
use crate::msg::{Msg, Timer};
use crate::sim::{Ctx, Detail, DurableStore, NodeId, SimTime};

pub const MANIFEST_KEY: &str = "boot/manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManagerParams {
    pub heartbeat_interval: u64,
    pub suspect_timeout: u64,
    pub fail_timeout: u64,
    /// How long a promotion waits for replica state reports.
    pub promotion_wait: u64,
}

impl Default for ManagerParams {
    fn default() -> Self {
        ManagerParams {
            heartbeat_interval: 100,
            suspect_timeout: 500,
            fail_timeout: 1000,
            promotion_wait: 20,
        }
    }
}

/// Desired deployment handed to a cluster's masters at install time.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<DeployedStage>,
    pub topics: Vec<(TopicId, usize)>,
    pub re_replication: bool,
}

impl Manifest {
    pub fn load(store: &DurableStore) -> Option<Manifest> {
        serde_json::from_slice(store.get(MANIFEST_KEY)?).ok()
    }

    pub fn save(&self, store: &mut DurableStore) {
        store.put(MANIFEST_KEY, serde_json::to_vec(self).unwrap());
    }
}

#[derive(Debug)]
struct Promotion {
    topic: TopicId,
    nonce: u64,
    reports: Vec<(NodeId, u64, u64)>,
}

enum Action {
    Propose(ConfigCommand),
    Promote(TopicId, Vec<NodeId>),
}

/// Control plane of one master: the config store plus the failure detector
/// and the reconciliation loop that runs while this master leads.
#[derive(Debug)]
pub struct Manager {
    node: NodeId,
    params: ManagerParams,
    pub store: ConfigStore,
    manifest: Manifest,
    last_seen: BTreeMap<NodeId, SimTime>,
    led_term: Option<u64>,
    inflight: Option<u64>,
    promotion: Option<Promotion>,
    nonce: u64,
    queued: VecDeque<ConfigCommand>,
    warned: BTreeSet<String>,
}

impl Manager {
    pub fn new(
        node: impl Into<NodeId>,
        masters: &[NodeId],
        initial: ClusterConfig,
        params: ManagerParams,
        raft: RaftParams,
        durable: &DurableStore,
    ) -> Self {
        let node = node.into();
        Manager {
            store: ConfigStore::new(node.clone(), masters, initial, raft, durable),
            manifest: Manifest::load(durable).unwrap_or_default(),
            node,
            params,
            last_seen: BTreeMap::new(),
            led_term: None,
            inflight: None,
            promotion: None,
            nonce: 0,
            queued: VecDeque::new(),
            warned: BTreeSet::new(),
        }
    }

    pub fn config(&self) -> &ClusterConfig {
        self.store.config()
    }

    pub fn is_leader(&self) -> bool {
        self.store.is_leader()
    }

    pub fn start(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.store.start(ctx);
    }

    pub fn on_heartbeat(&mut self, from: &str, now: SimTime) {
        let seen = self.last_seen.entry(from.to_string()).or_insert(now);
        *seen = (*seen).max(now);
    }

    /// Queues an operator command; it is proposed on a later reconcile.
    pub fn enqueue(&mut self, cmd: ConfigCommand) -> Result<(), ProposeError> {
        if !self.is_leader() {
            return Err(ProposeError::NotLeader {
                hint: self.store.leader().cloned(),
            });
        }
        self.queued.push_back(cmd);
        Ok(())
    }

    pub fn on_state_reply(&mut self, from: &str, topic: &TopicId, nonce: u64, last_epoch: u64, len: u64) {
        if let Some(p) = &mut self.promotion {
            if p.nonce == nonce && &p.topic == topic {
                p.reports.push((from.to_string(), last_epoch, len));
            }
        }
    }

    pub fn on_promotion_deadline(&mut self, ctx: &mut Ctx<'_, Msg>, nonce: u64) {
        let Some(p) = self.promotion.take_if(|p| p.nonce == nonce) else {
            return;
        };
        if !self.is_leader() {
            return;
        }
        let Some(assignment) = self.config().topics.get(&p.topic) else {
            return;
        };
        let epoch = assignment.leader_epoch;
        // Only a majority of reports is guaranteed to include a replica
        // holding every committed record.
        let needed = assignment.majority();
        if p.reports.len() < needed {
            ctx.emit(
                "promotion_failed",
                Detail::new()
                    .with("topic", &p.topic)
                    .with("reason", "no_majority")
                    .with("reports", p.reports.len())
                    .with("needed", needed),
            );
            return;
        }
        let leader = choose_leader(&p.reports).expect("majority is never zero");
        ctx.emit(
            "promotion",
            Detail::new()
                .with("topic", &p.topic)
                .with("leader", &leader)
                .with("reports", p.reports.len()),
        );
        self.propose(
            ctx,
            ConfigCommand::SetTopicLeader {
                topic: p.topic,
                leader,
                leader_epoch: epoch + 1,
            },
        );
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.store.on_tick(ctx);
        self.reconcile(ctx);
    }

    fn propose(&mut self, ctx: &mut Ctx<'_, Msg>, cmd: ConfigCommand) {
        match self.store.propose(ctx, cmd) {
            Ok(index) => self.inflight = Some(index),
            Err(e) => {
                let reason = match e {
                    ProposeError::NotLeader { .. } => "not_leader",
                    ProposeError::NoQuorum => "no_quorum",
                };
                ctx.emit("propose_rejected", Detail::new().with("reason", reason));
            }
        }
    }

    fn warn_once(&mut self, ctx: &mut Ctx<'_, Msg>, key: String, kind: &str, d: Detail) {
        if self.warned.insert(key) {
            ctx.emit(kind, d);
        }
    }

    /// Level-triggered: compares the committed configuration with observed
    /// liveness and the manifest, and proposes the first needed change.
    pub fn reconcile(&mut self, ctx: &mut Ctx<'_, Msg>) {
        if !self.is_leader() {
            self.led_term = None;
            self.inflight = None;
            self.promotion = None;
            return;
        }
        let now = ctx.now();
        if self.led_term != Some(self.store.term()) {
            self.led_term = Some(self.store.term());
            self.inflight = None;
            self.promotion = None;
            // Nodes not yet heard from in this term get a full timeout.
            let ids: Vec<_> = self.config().membership.keys().cloned().collect();
            for id in ids {
                self.last_seen.entry(id).or_insert(now);
            }
        }
        self.last_seen.insert(self.node.clone(), now);
        if let Some(i) = self.inflight {
            if self.config().epoch < i {
                return;
            }
            self.inflight = None;
        }
        if self.promotion.is_some() || !self.store.has_quorum(now) {
            return;
        }
        match self.next_action(ctx, now) {
            Some(Action::Propose(cmd)) => self.propose(ctx, cmd),
            Some(Action::Promote(topic, candidates)) => {
                self.nonce += 1;
                let nonce = self.nonce;
                for c in &candidates {
                    ctx.send(
                        c,
                        Msg::Log(LogMsg::StateQuery {
                            topic: topic.clone(),
                            nonce,
                        }),
                    );
                }
                self.promotion = Some(Promotion {
                    topic,
                    nonce,
                    reports: Vec::new(),
                });
                ctx.timer(
                    self.params.promotion_wait,
                    Msg::Timer(Timer::PromotionDeadline { nonce }),
                );
            }
            None => {}
        }
    }

    fn next_action(&mut self, ctx: &mut Ctx<'_, Msg>, now: SimTime) -> Option<Action> {
        let config = self.store.config().clone();
        if !config.bootstrapped {
            return Some(Action::Propose(ConfigCommand::Bootstrap {
                stages: self.manifest.stages.clone(),
            }));
        }
        if let Some(cmd) = self.status_change(&config, now) {
            return Some(Action::Propose(cmd));
        }
        if let Some(cmd) = self.queued.pop_front() {
            return Some(Action::Propose(cmd));
        }
        for (topic, rf) in self.manifest.topics.clone() {
            if config.topics.contains_key(&topic) {
                continue;
            }
            match place_replicas(&config, rf) {
                Some((replicas, leader)) => {
                    return Some(Action::Propose(ConfigCommand::CreateTopic {
                        topic,
                        rf,
                        replicas,
                        leader,
                    }))
                }
                None => self.warn_once(
                    ctx,
                    format!("create/{topic}"),
                    "topic_unplaceable",
                    Detail::new().with("topic", &topic).with("rf", rf),
                ),
            }
        }
        for (stage, placed) in &config.placements {
            let lost = match placed {
                None => true,
                Some(n) => config.status(n).is_none_or(|s| s == Health::Failed),
            };
            if !lost {
                continue;
            }
            let target = schedule_stage(&config, stage);
            if target != *placed {
                return Some(Action::Propose(ConfigCommand::PlaceStage {
                    stage: stage.clone(),
                    node: target,
                }));
            }
        }
        for (topic, a) in &config.topics {
            let leader_lost = a
                .leader
                .as_ref()
                .is_none_or(|l| config.status(l) == Some(Health::Failed));
            if !leader_lost {
                continue;
            }
            let candidates: Vec<NodeId> = a
                .replicas
                .iter()
                .filter(|r| config.is_up(r))
                .cloned()
                .collect();
            if candidates.is_empty() {
                self.warn_once(
                    ctx,
                    format!("unavailable/{topic}/{}", a.leader_epoch),
                    "topic_unavailable",
                    Detail::new().with("topic", topic),
                );
                continue;
            }
            return Some(Action::Promote(topic.clone(), candidates));
        }
        if self.manifest.re_replication {
            for (topic, a) in &config.topics {
                for r in &a.replicas {
                    if config.status(r) != Some(Health::Failed) || a.leader.as_ref() == Some(r) {
                        continue;
                    }
                    match replacement_replica(&config, topic) {
                        Some(new) => {
                            return Some(Action::Propose(ConfigCommand::ReassignReplica {
                                topic: topic.clone(),
                                old: r.clone(),
                                new,
                            }))
                        }
                        None => self.warn_once(
                            ctx,
                            format!("rereplicate/{topic}/{r}"),
                            "rereplication_blocked",
                            Detail::new().with("topic", topic).with("replica", r),
                        ),
                    }
                }
            }
        }
        None
    }

    /// Failure detector: the first status transition the heartbeats call for.
    fn status_change(&mut self, config: &ClusterConfig, now: SimTime) -> Option<ConfigCommand> {
        for (id, d) in &config.membership {
            let last = *self.last_seen.entry(id.clone()).or_insert(now);
            let silent = now.saturating_sub(last);
            let next = match d.status {
                Health::Up if silent > self.params.suspect_timeout => Health::Suspected,
                Health::Suspected if silent > self.params.fail_timeout => Health::Failed,
                Health::Suspected | Health::Failed if silent <= self.params.suspect_timeout => {
                    Health::Up
                }
                _ => continue,
            };
            return Some(ConfigCommand::SetNodeStatus {
                node: id.clone(),
                status: next,
            });
        }
        None
    }
}
