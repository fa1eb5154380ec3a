use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use super::config::{decode_entries, encode_entry, ClusterConfig, ConfigCommand, ConfigEntry};
use crate::log::majority;
use crate::msg::{Msg, Timer};
use crate::sim::{Ctx, Detail, DurableStore, NodeId, SimTime};

const TERM_KEY: &str = "raft/term";
const VOTE_KEY: &str = "raft/vote";
const LOG_KEY: &str = "raft/log";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RaftParams {
    pub election_min: u64,
    pub election_max: u64,
    /// Interval of leader appends; doubles as the manager's reconcile tick.
    pub tick: u64,
    /// A leader that has heard from no majority for this long steps down.
    pub quorum_timeout: u64,
    pub max_entries: usize,
}

impl Default for RaftParams {
    fn default() -> Self {
        RaftParams {
            election_min: 150,
            election_max: 300,
            tick: 50,
            quorum_timeout: 300,
            max_entries: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaftMsg {
    RequestVote {
        term: u64,
        last_index: u64,
        last_term: u64,
    },
    VoteReply {
        term: u64,
        granted: bool,
    },
    Append {
        term: u64,
        prev_index: u64,
        prev_term: u64,
        entries: Vec<ConfigEntry>,
        commit: u64,
    },
    AppendReply {
        term: u64,
        success: bool,
        match_index: u64,
    },
}

impl RaftMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            RaftMsg::RequestVote { .. } => "request_vote",
            RaftMsg::VoteReply { .. } => "vote_reply",
            RaftMsg::Append { .. } => "append_entries",
            RaftMsg::AppendReply { .. } => "append_reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProposeError {
    #[error("not the leader")]
    NotLeader { hint: Option<NodeId> },
    #[error("no quorum of masters reachable")]
    NoQuorum,
}

#[derive(Debug, Clone)]
struct PeerProgress {
    next: u64,
    matched: u64,
    last_ack: SimTime,
}

#[derive(Debug, Clone)]
enum Role {
    Follower,
    Candidate { votes: BTreeSet<NodeId> },
    Leader { peers: BTreeMap<NodeId, PeerProgress> },
}

/// Replicated configuration log of one cluster, run on each master.
///
/// Term, vote and log are durable; the role, commit point and the applied
/// configuration are rebuilt after a restart from what the leader sends.
#[derive(Debug)]
pub struct ConfigStore {
    node: NodeId,
    peers: Vec<NodeId>,
    params: RaftParams,
    term: u64,
    voted_for: Option<NodeId>,
    log: Vec<ConfigEntry>,
    role: Role,
    leader: Option<NodeId>,
    commit: u64,
    initial: ClusterConfig,
    config: ClusterConfig,
    election_token: u64,
}

impl ConfigStore {
    pub fn new(
        node: impl Into<NodeId>,
        masters: &[NodeId],
        initial: ClusterConfig,
        params: RaftParams,
        store: &DurableStore,
    ) -> Self {
        let node = node.into();
        let read_u64 = |k| {
            store
                .get(k)
                .and_then(|b| b.try_into().ok())
                .map_or(0, u64::from_be_bytes)
        };
        let voted_for = store
            .get(VOTE_KEY)
            .filter(|b| !b.is_empty())
            .map(|b| String::from_utf8_lossy(b).into_owned());
        let log = store
            .get(LOG_KEY)
            .map(|b| decode_entries(b).expect("config log written by this store"))
            .unwrap_or_default();
        ConfigStore {
            peers: masters.iter().filter(|m| **m != node).cloned().collect(),
            node,
            params,
            term: read_u64(TERM_KEY),
            voted_for,
            log,
            role: Role::Follower,
            leader: None,
            commit: 0,
            config: initial.clone(),
            initial,
            election_token: 0,
        }
    }

    pub fn term(&self) -> u64 {
        self.term
    }

    pub fn is_leader(&self) -> bool {
        matches!(self.role, Role::Leader { .. })
    }

    pub fn leader(&self) -> Option<&NodeId> {
        self.leader.as_ref()
    }

    pub fn commit_index(&self) -> u64 {
        self.commit
    }

    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    /// Configuration with every committed command applied.
    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ConfigEntry] {
        &self.log
    }

    fn term_at(&self, index: u64) -> u64 {
        match index {
            0 => 0,
            i => self.log.get(i as usize - 1).map_or(0, |e| e.term),
        }
    }

    fn persist_term(&self, ctx: &mut Ctx<'_, Msg>) {
        let s = ctx.store();
        s.put(TERM_KEY, self.term.to_be_bytes().to_vec());
        s.put(
            VOTE_KEY,
            self.voted_for.clone().unwrap_or_default().into_bytes(),
        );
    }

    fn persist_log_from(&self, ctx: &mut Ctx<'_, Msg>, from: usize, rewrite: bool) {
        let s = ctx.store();
        if rewrite {
            let mut bytes = Vec::new();
            for e in &self.log {
                encode_entry(e, &mut bytes);
            }
            s.put(LOG_KEY, bytes);
        } else {
            let mut bytes = Vec::new();
            for e in &self.log[from..] {
                encode_entry(e, &mut bytes);
            }
            s.append(LOG_KEY, &bytes);
        }
    }

    pub fn start(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.reset_election_timer(ctx);
    }

    fn reset_election_timer(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.election_token += 1;
        let delay = ctx
            .rng()
            .random_range(self.params.election_min..=self.params.election_max);
        ctx.timer(
            delay,
            Msg::Timer(Timer::Election {
                token: self.election_token,
            }),
        );
    }

    fn step_down(&mut self, ctx: &mut Ctx<'_, Msg>, term: u64) {
        if term > self.term {
            self.term = term;
            self.voted_for = None;
            self.persist_term(ctx);
        }
        if self.is_leader() {
            ctx.emit(
                "leader_stepdown",
                Detail::new()
                    .with("cluster", self.config.cluster)
                    .with("term", self.term),
            );
            self.leader = None;
            self.role = Role::Follower;
            // Leaders run no election timer.
            self.reset_election_timer(ctx);
        }
        self.role = Role::Follower;
    }

    pub fn on_election_timeout(&mut self, ctx: &mut Ctx<'_, Msg>, token: u64) {
        if token != self.election_token || self.is_leader() {
            return;
        }
        self.term += 1;
        self.voted_for = Some(self.node.clone());
        self.leader = None;
        self.persist_term(ctx);
        self.role = Role::Candidate {
            votes: BTreeSet::from([self.node.clone()]),
        };
        ctx.emit(
            "election_start",
            Detail::new()
                .with("cluster", self.config.cluster)
                .with("term", self.term),
        );
        let msg = RaftMsg::RequestVote {
            term: self.term,
            last_index: self.last_index(),
            last_term: self.term_at(self.last_index()),
        };
        for p in &self.peers {
            ctx.send(p, Msg::Raft(msg.clone()));
        }
        self.reset_election_timer(ctx);
        self.maybe_win(ctx);
    }

    fn maybe_win(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let Role::Candidate { votes } = &self.role else {
            return;
        };
        if votes.len() < majority(self.peers.len() + 1) {
            return;
        }
        let now = ctx.now();
        let next = self.last_index() + 1;
        self.role = Role::Leader {
            peers: self
                .peers
                .iter()
                .map(|p| {
                    (
                        p.clone(),
                        PeerProgress {
                            next,
                            matched: 0,
                            last_ack: now,
                        },
                    )
                })
                .collect(),
        };
        self.leader = Some(self.node.clone());
        ctx.emit(
            "leader_elected",
            Detail::new()
                .with("cluster", self.config.cluster)
                .with("term", self.term),
        );
        let noop = ConfigCommand::Noop {
            leader: self.node.clone(),
        };
        self.append_local(ctx, noop);
        self.broadcast(ctx);
    }

    fn append_local(&mut self, ctx: &mut Ctx<'_, Msg>, cmd: ConfigCommand) -> u64 {
        let index = self.last_index() + 1;
        self.log.push(ConfigEntry {
            epoch: index,
            term: self.term,
            cmd,
        });
        self.persist_log_from(ctx, index as usize - 1, false);
        self.advance_commit(ctx);
        index
    }

    /// Number of masters, self included, heard from recently.
    fn reachable(&self, now: SimTime) -> usize {
        match &self.role {
            Role::Leader { peers } => {
                1 + peers
                    .values()
                    .filter(|p| now.saturating_sub(p.last_ack) <= self.params.quorum_timeout)
                    .count()
            }
            _ => 0,
        }
    }

    pub fn has_quorum(&self, now: SimTime) -> bool {
        self.reachable(now) >= majority(self.peers.len() + 1)
    }

    /// Appends a command; it takes effect once committed. Returns the epoch
    /// the configuration will have after applying it.
    pub fn propose(&mut self, ctx: &mut Ctx<'_, Msg>, cmd: ConfigCommand) -> Result<u64, ProposeError> {
        if !self.is_leader() {
            return Err(ProposeError::NotLeader {
                hint: self.leader.clone(),
            });
        }
        if !self.has_quorum(ctx.now()) {
            return Err(ProposeError::NoQuorum);
        }
        let index = self.append_local(ctx, cmd);
        self.broadcast(ctx);
        Ok(index)
    }

    /// Leader heartbeat; steps down after losing contact with a majority.
    pub fn on_tick(&mut self, ctx: &mut Ctx<'_, Msg>) {
        if !self.is_leader() {
            return;
        }
        if !self.has_quorum(ctx.now()) {
            let term = self.term;
            self.step_down(ctx, term);
            return;
        }
        self.broadcast(ctx);
    }

    fn broadcast(&mut self, ctx: &mut Ctx<'_, Msg>) {
        for p in self.peers.clone() {
            self.send_append(ctx, &p);
        }
    }

    fn send_append(&mut self, ctx: &mut Ctx<'_, Msg>, peer: &str) {
        let Role::Leader { peers } = &self.role else {
            return;
        };
        let Some(p) = peers.get(peer) else { return };
        let prev_index = p.next - 1;
        let end = self.log.len().min(prev_index as usize + self.params.max_entries);
        let msg = RaftMsg::Append {
            term: self.term,
            prev_index,
            prev_term: self.term_at(prev_index),
            entries: self.log[prev_index as usize..end].to_vec(),
            commit: self.commit,
        };
        ctx.send(peer, Msg::Raft(msg));
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_, Msg>, from: &str, msg: RaftMsg) {
        match msg {
            RaftMsg::RequestVote {
                term,
                last_index,
                last_term,
            } => self.on_request_vote(ctx, from, term, last_index, last_term),
            RaftMsg::VoteReply { term, granted } => {
                if term > self.term {
                    self.step_down(ctx, term);
                    return;
                }
                if term == self.term && granted {
                    if let Role::Candidate { votes } = &mut self.role {
                        votes.insert(from.to_string());
                    }
                    self.maybe_win(ctx);
                }
            }
            RaftMsg::Append {
                term,
                prev_index,
                prev_term,
                entries,
                commit,
            } => self.on_append(ctx, from, term, prev_index, prev_term, entries, commit),
            RaftMsg::AppendReply {
                term,
                success,
                match_index,
            } => self.on_append_reply(ctx, from, term, success, match_index),
        }
    }

    fn on_request_vote(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        from: &str,
        term: u64,
        last_index: u64,
        last_term: u64,
    ) {
        if term > self.term {
            self.step_down(ctx, term);
        }
        let my_last = (self.term_at(self.last_index()), self.last_index());
        let up_to_date = (last_term, last_index) >= my_last;
        let mut granted = false;
        if term == self.term && up_to_date {
            match (&self.role, &self.voted_for) {
                (Role::Follower, None) => granted = true,
                (Role::Follower, Some(v)) => granted = v == from,
                // Split vote between candidates of one term: the lower node id
                // wins and the other withdraws its own vote.
                (Role::Candidate { .. }, _) if from < self.node.as_str() => {
                    self.role = Role::Follower;
                    granted = true;
                    ctx.emit(
                        "candidate_yield",
                        Detail::new().with("term", term).with("to", from),
                    );
                }
                _ => {}
            }
        }
        if granted {
            self.voted_for = Some(from.to_string());
            self.persist_term(ctx);
            self.reset_election_timer(ctx);
        }
        ctx.send(
            from,
            Msg::Raft(RaftMsg::VoteReply {
                term: self.term,
                granted,
            }),
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn on_append(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        from: &str,
        term: u64,
        prev_index: u64,
        prev_term: u64,
        entries: Vec<ConfigEntry>,
        commit: u64,
    ) {
        let reply = |ctx: &mut Ctx<'_, Msg>, term, success, match_index| {
            ctx.send(
                from,
                Msg::Raft(RaftMsg::AppendReply {
                    term,
                    success,
                    match_index,
                }),
            );
        };
        if term < self.term {
            reply(ctx, self.term, false, 0);
            return;
        }
        if term > self.term || !matches!(self.role, Role::Follower) {
            self.step_down(ctx, term);
        }
        self.leader = Some(from.to_string());
        self.reset_election_timer(ctx);
        if prev_index > self.last_index() || self.term_at(prev_index) != prev_term {
            let hint = prev_index.saturating_sub(1).min(self.last_index());
            reply(ctx, self.term, false, hint);
            return;
        }
        let matched = prev_index + entries.len() as u64;
        let mut first_new = None;
        let mut rewrite = false;
        for (i, e) in entries.into_iter().enumerate() {
            let index = prev_index + 1 + i as u64;
            if index <= self.last_index() {
                if self.term_at(index) == e.term {
                    continue;
                }
                self.log.truncate(index as usize - 1);
                rewrite = true;
            }
            first_new.get_or_insert(index as usize - 1);
            self.log.push(e);
        }
        if let Some(from_pos) = first_new {
            self.persist_log_from(ctx, from_pos, rewrite);
        }
        if commit > self.commit {
            self.commit = commit.min(matched);
            self.apply_committed(ctx);
        }
        reply(ctx, self.term, true, matched);
    }

    fn on_append_reply(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        from: &str,
        term: u64,
        success: bool,
        match_index: u64,
    ) {
        if term > self.term {
            self.step_down(ctx, term);
            return;
        }
        if term != self.term {
            return;
        }
        let now = ctx.now();
        let last = self.last_index();
        let Role::Leader { peers } = &mut self.role else {
            return;
        };
        let Some(p) = peers.get_mut(from) else { return };
        p.last_ack = now;
        if success {
            p.matched = p.matched.max(match_index);
            p.next = p.matched + 1;
            let behind = p.matched < last;
            self.advance_commit(ctx);
            if behind {
                self.send_append(ctx, from);
            }
        } else {
            p.next = (match_index + 1).min(p.next.saturating_sub(1)).max(1);
            self.send_append(ctx, from);
        }
    }

    fn advance_commit(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let Role::Leader { peers } = &self.role else {
            return;
        };
        let mut matched: Vec<u64> = peers.values().map(|p| p.matched).collect();
        matched.push(self.last_index());
        matched.sort_unstable_by(|a, b| b.cmp(a));
        let n = matched[majority(self.peers.len() + 1) - 1];
        if n > self.commit && self.term_at(n) == self.term {
            self.commit = n;
            self.apply_committed(ctx);
        }
    }

    fn apply_committed(&mut self, ctx: &mut Ctx<'_, Msg>) {
        while self.config.epoch < self.commit {
            let entry = self.log[self.config.epoch as usize].clone();
            let result = self.config.apply(&entry.cmd);
            let mut d = Detail::new()
                .with("cluster", self.config.cluster)
                .with("epoch", entry.epoch)
                .with("term", entry.term)
                .with("cmd", entry.cmd.name());
            describe(&entry.cmd, &mut d);
            if let Err(e) = &result {
                d.push("rejected", e);
            }
            let kind = if self.is_leader() {
                "config_commit"
            } else {
                "config_apply"
            };
            ctx.emit(kind, d);
            if let (true, ConfigCommand::SetNodeStatus { node, status }, Ok(())) =
                (self.is_leader(), &entry.cmd, &result)
            {
                ctx.emit(
                    "node_status",
                    Detail::new()
                        .with("cluster", self.config.cluster)
                        .with("target", node)
                        .with("status", status)
                        .with("epoch", entry.epoch),
                );
            }
        }
    }

    /// Drops everything volatile, as after a restart.
    pub fn reset_volatile(&mut self) {
        self.role = Role::Follower;
        self.leader = None;
        self.commit = 0;
        self.config = self.initial.clone();
    }
}

/// Adds the command's arguments to a trace detail.
pub fn describe(cmd: &ConfigCommand, d: &mut Detail) {
    match cmd {
        ConfigCommand::Noop { leader } => d.push("leader", leader),
        ConfigCommand::Bootstrap { stages } => d.push("stages", stages.len()),
        ConfigCommand::SetNodeStatus { node, status } => {
            d.push("node", node);
            d.push("status", status);
        }
        ConfigCommand::CreateTopic {
            topic,
            rf,
            replicas,
            leader,
        } => {
            d.push("topic", topic);
            d.push("rf", rf);
            d.push("replicas", replicas.join("+"));
            d.push("leader", leader);
        }
        ConfigCommand::SetTopicLeader {
            topic,
            leader,
            leader_epoch,
        } => {
            d.push("topic", topic);
            d.push("leader", leader);
            d.push("leader_epoch", leader_epoch);
        }
        ConfigCommand::ReassignReplica { topic, old, new } => {
            d.push("topic", topic);
            d.push("old", old);
            d.push("new", new);
        }
        ConfigCommand::PlaceStage { stage, node } => {
            d.push("stage", stage);
            d.push("node", node.as_deref().unwrap_or("none"));
        }
        ConfigCommand::Rewire { upserts, removes } => {
            let ids: Vec<&str> = upserts.iter().map(|s| s.spec.stage_id.as_str()).collect();
            d.push("upserts", ids.join("+"));
            d.push("removes", removes.join("+"));
        }
    }
}
