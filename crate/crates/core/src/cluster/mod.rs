//! Multi-cluster management: per-cluster membership, a replicated
//! configuration store on the masters, failure detection and placement.

mod config;
mod manager;
pub mod placement;
mod raft;
mod status;

use std::collections::BTreeMap;

pub use config::{
    decode_entries, encode_entry, ClusterConfig, ConfigCommand, ConfigEntry, ConfigError,
    DeployedStage, EntryDecodeError, Health, NodeDescriptor, Role,
};
pub use manager::{Manager, ManagerParams, Manifest, MANIFEST_KEY};
pub use raft::{describe, ConfigStore, ProposeError, RaftMsg, RaftParams};
pub use status::{degraded_mode_status, DegradedStatus};

use crate::sim::{Cluster, NodeId};

/// Static list of every node and its role, known to all nodes at install
/// time the way bootstrap server lists are.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Directory {
    nodes: BTreeMap<NodeId, (Cluster, Role)>,
}

impl Directory {
    pub fn new(nodes: impl IntoIterator<Item = (NodeId, Cluster, Role)>) -> Self {
        Directory {
            nodes: nodes.into_iter().map(|(n, c, r)| (n, (c, r))).collect(),
        }
    }

    pub fn cluster_of(&self, node: &str) -> Option<Cluster> {
        self.nodes.get(node).map(|(c, _)| *c)
    }

    pub fn role_of(&self, node: &str) -> Option<Role> {
        self.nodes.get(node).map(|(_, r)| *r)
    }

    pub fn members(&self, cluster: Cluster) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, (c, _))| *c == cluster)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn masters(&self, cluster: Cluster) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, (c, r))| *c == cluster && *r == Role::Master)
            .map(|(n, _)| n.clone())
            .collect()
    }
}
