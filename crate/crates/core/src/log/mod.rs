//! Data transport: per-topic replicated append-only logs.
//!
//! A topic is a single-partition log replicated to `rf` brokers. The leader
//! assigns offsets, pushes entries to followers, and acknowledges a produce
//! only once a majority of the replica set holds it durably. Leadership is
//! handed out by the cluster manager through the committed configuration.

mod broker;
mod record;
mod replica;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use broker::{Broker, BrokerParams};
pub use record::{
    decode_entry, decode_segment, encode_entry, encode_segment, DecodeError, Offset, Record,
    TopicId,
};
pub use replica::{GroupState, ReplicaLog};

use crate::sim::NodeId;

pub type ReqId = u64;

/// Placement of one topic as recorded in the cluster configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    pub rf: usize,
    pub replicas: Vec<NodeId>,
    pub leader: Option<NodeId>,
    pub leader_epoch: u64,
}

impl TopicAssignment {
    /// Copies needed before a write is acknowledged.
    pub fn majority(&self) -> usize {
        majority(self.replicas.len().max(self.rf))
    }
}

pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

/// Leader's view of a topic's replicas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaSet {
    pub leader: NodeId,
    pub followers: Vec<NodeId>,
    pub in_sync: BTreeSet<NodeId>,
    /// `None` while nothing is committed.
    pub commit_index: Option<Offset>,
}

/// Picks a new leader among replicas that answered a state query.
///
/// The replica whose last entry carries the highest leader epoch wins, then
/// the longest durable log, then the lowest node id.
pub fn choose_leader(candidates: &[(NodeId, u64, u64)]) -> Option<NodeId> {
    candidates
        .iter()
        .max_by(|a, b| (a.1, a.2).cmp(&(b.1, b.2)).then_with(|| b.0.cmp(&a.0)))
        .map(|c| c.0.clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogError {
    NotLeader { hint: Option<NodeId> },
    NotEnoughReplicas,
    OffsetRegression { current: Offset },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplicateResult {
    /// The follower's log matches the leader's up to `matched`.
    Ack { matched: u64 },
    /// Resend starting from `hint`.
    Mismatch { hint: u64 },
    /// The sender's epoch is older than one the follower has seen.
    Stale { epoch: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogMsg {
    Produce {
        req: ReqId,
        topic: TopicId,
        records: Vec<Record>,
        stage: String,
    },
    ProduceReply {
        req: ReqId,
        topic: TopicId,
        result: Result<Offset, LogError>,
    },
    Replicate {
        topic: TopicId,
        epoch: u64,
        prev_len: u64,
        prev_epoch: u64,
        entries: Vec<(u64, Record)>,
        /// Log length when this leader took over.
        leader_start: u64,
        commit_len: u64,
        groups: BTreeMap<String, GroupState>,
    },
    ReplicateReply {
        topic: TopicId,
        epoch: u64,
        result: ReplicateResult,
    },
    Fetch {
        req: ReqId,
        topic: TopicId,
        from: Offset,
        max: usize,
    },
    FetchReply {
        req: ReqId,
        topic: TopicId,
        from: Offset,
        result: Result<Vec<Record>, LogError>,
    },
    CommitOffset {
        req: ReqId,
        topic: TopicId,
        group: String,
        state: GroupState,
    },
    CommitOffsetReply {
        req: ReqId,
        topic: TopicId,
        result: Result<(), LogError>,
    },
    FetchCommitted {
        req: ReqId,
        topic: TopicId,
        group: String,
    },
    FetchCommittedReply {
        req: ReqId,
        topic: TopicId,
        result: Result<GroupState, LogError>,
    },
    StateQuery {
        topic: TopicId,
        nonce: u64,
    },
    StateReply {
        topic: TopicId,
        nonce: u64,
        last_epoch: u64,
        len: u64,
    },
}

impl LogMsg {
    pub fn kind(&self) -> &'static str {
        match self {
            LogMsg::Produce { .. } => "produce",
            LogMsg::ProduceReply { .. } => "produce_reply",
            LogMsg::Replicate { .. } => "replicate",
            LogMsg::ReplicateReply { .. } => "replicate_reply",
            LogMsg::Fetch { .. } => "fetch",
            LogMsg::FetchReply { .. } => "fetch_reply",
            LogMsg::CommitOffset { .. } => "commit_offset",
            LogMsg::CommitOffsetReply { .. } => "commit_offset_reply",
            LogMsg::FetchCommitted { .. } => "fetch_committed",
            LogMsg::FetchCommittedReply { .. } => "fetch_committed_reply",
            LogMsg::StateQuery { .. } => "state_query",
            LogMsg::StateReply { .. } => "state_reply",
        }
    }
}
