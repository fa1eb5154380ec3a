//! Deterministic simulation of an edge/cloud streaming pipeline with a
//! replicated log, a per-cluster configuration store and stage rescheduling.

pub mod check;
pub mod cluster;
pub mod error;
pub mod log;
pub mod msg;
pub mod node;
pub mod pipeline;
pub mod scenario;
pub mod sim;
pub mod world;

pub use check::{CheckResult, CheckSpec};
pub use error::SimError;
pub use scenario::{ExecOptions, Outcome, Scenario};
pub use sim::{Cluster, Kernel, NetConfig, NodeId, SimTime};
pub use world::{TopicDecl, TopicDump, World, WorldSetup};
