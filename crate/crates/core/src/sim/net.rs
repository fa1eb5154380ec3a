use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the two independently managed clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cluster {
    Edge,
    Cloud,
}

impl Cluster {
    pub const ALL: [Cluster; 2] = [Cluster::Edge, Cluster::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            Cluster::Edge => "edge",
            Cluster::Cloud => "cloud",
        }
    }

    pub fn lan(self) -> NetDomain {
        match self {
            Cluster::Edge => NetDomain::EdgeLan,
            Cluster::Cloud => NetDomain::CloudLan,
        }
    }
}

impl fmt::Display for Cluster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cluster {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge" => Ok(Cluster::Edge),
            "cloud" => Ok(Cluster::Cloud),
            other => Err(format!("unknown cluster `{other}`")),
        }
    }
}

/// Network domain a message crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NetDomain {
    EdgeLan,
    CloudLan,
    Wan,
}

impl NetDomain {
    pub const ALL: [NetDomain; 3] = [NetDomain::EdgeLan, NetDomain::CloudLan, NetDomain::Wan];

    /// Domain for traffic between nodes of the given clusters.
    pub fn between(a: Cluster, b: Cluster) -> NetDomain {
        if a == b {
            a.lan()
        } else {
            NetDomain::Wan
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetDomain::EdgeLan => "edge_lan",
            NetDomain::CloudLan => "cloud_lan",
            NetDomain::Wan => "wan",
        }
    }

    fn index(self) -> usize {
        match self {
            NetDomain::EdgeLan => 0,
            NetDomain::CloudLan => 1,
            NetDomain::Wan => 2,
        }
    }
}

impl fmt::Display for NetDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetDomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge_lan" => Ok(NetDomain::EdgeLan),
            "cloud_lan" => Ok(NetDomain::CloudLan),
            "wan" => Ok(NetDomain::Wan),
            other => Err(format!("unknown network domain `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkState {
    pub domain: NetDomain,
    /// One-way latency in milliseconds, always > 0.
    pub latency: u64,
    pub partitioned: bool,
}

/// Per-domain latencies in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub edge_lan: u64,
    pub cloud_lan: u64,
    pub wan: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            edge_lan: 1,
            cloud_lan: 1,
            wan: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Links {
    links: [LinkState; 3],
}

impl Links {
    pub(crate) fn new(cfg: NetConfig) -> Self {
        let mk = |domain, latency: u64| LinkState {
            domain,
            latency: latency.max(1),
            partitioned: false,
        };
        Links {
            links: [
                mk(NetDomain::EdgeLan, cfg.edge_lan),
                mk(NetDomain::CloudLan, cfg.cloud_lan),
                mk(NetDomain::Wan, cfg.wan),
            ],
        }
    }

    pub(crate) fn get(&self, d: NetDomain) -> &LinkState {
        &self.links[d.index()]
    }

    pub(crate) fn get_mut(&mut self, d: NetDomain) -> &mut LinkState {
        &mut self.links[d.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_cluster_traffic_is_wan() {
        assert_eq!(NetDomain::between(Cluster::Edge, Cluster::Cloud), NetDomain::Wan);
        assert_eq!(NetDomain::between(Cluster::Cloud, Cluster::Edge), NetDomain::Wan);
        assert_eq!(NetDomain::between(Cluster::Edge, Cluster::Edge), NetDomain::EdgeLan);
        assert_eq!(NetDomain::between(Cluster::Cloud, Cluster::Cloud), NetDomain::CloudLan);
    }

    #[test]
    fn zero_latency_is_clamped() {
        let links = Links::new(NetConfig { edge_lan: 0, cloud_lan: 1, wan: 50 });
        assert_eq!(links.get(NetDomain::EdgeLan).latency, 1);
    }
}
