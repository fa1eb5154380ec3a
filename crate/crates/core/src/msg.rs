use std::sync::Arc;

use crate::cluster::{ClusterConfig, RaftMsg};
use crate::log::{LogMsg, ReqId};
use crate::pipeline::{RewireEntry, StageId};
use crate::sim::MessageKind;

/// Every message the simulated nodes exchange.
#[derive(Debug, Clone)]
pub enum Msg {
    Log(LogMsg),
    Raft(RaftMsg),
    /// Liveness beacon from any node to the masters of its cluster.
    Heartbeat { epoch: u64 },
    ConfigPush(Arc<ClusterConfig>),
    Timer(Timer),
    External(External),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Timer {
    Replication,
    Heartbeat,
    Election { token: u64 },
    LeaderTick,
    PromotionDeadline { nonce: u64 },
    StageTick { stage: StageId, gen: u64 },
    RequestTimeout { stage: StageId, req: ReqId },
}

/// Stimuli injected by the scenario rather than sent by a node.
#[derive(Debug, Clone)]
pub enum External {
    Generate { stage: StageId, count: u64 },
    Rewire { entries: Vec<RewireEntry> },
}

impl MessageKind for Msg {
    fn kind(&self) -> &'static str {
        match self {
            Msg::Log(m) => m.kind(),
            Msg::Raft(m) => m.kind(),
            Msg::Heartbeat { .. } => "heartbeat",
            Msg::ConfigPush(_) => "config_push",
            Msg::Timer(_) => "timer",
            Msg::External(_) => "external",
        }
    }
}
