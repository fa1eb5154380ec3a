use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::TopicId;
use crate::sim::Cluster;

pub type StageId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StageKind {
    Source,
    Transform,
    Bridge,
    Sink,
}

impl StageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StageKind::Source => "source",
            StageKind::Transform => "transform",
            StageKind::Bridge => "bridge",
            StageKind::Sink => "sink",
        }
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" => Ok(StageKind::Source),
            "transform" => Ok(StageKind::Transform),
            "bridge" => Ok(StageKind::Bridge),
            "sink" => Ok(StageKind::Sink),
            other => Err(format!("unknown stage kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Affinity {
    Edge,
    Cloud,
    Any,
}

impl Affinity {
    pub fn as_str(self) -> &'static str {
        match self {
            Affinity::Edge => "edge",
            Affinity::Cloud => "cloud",
            Affinity::Any => "any",
        }
    }

    pub fn admits(self, c: Cluster) -> bool {
        match self {
            Affinity::Edge => c == Cluster::Edge,
            Affinity::Cloud => c == Cluster::Cloud,
            Affinity::Any => true,
        }
    }
}

impl fmt::Display for Affinity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Affinity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "edge" => Ok(Affinity::Edge),
            "cloud" => Ok(Affinity::Cloud),
            "any" => Ok(Affinity::Any),
            other => Err(format!("unknown affinity `{other}`")),
        }
    }
}

/// Wiring of one processing stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: StageId,
    pub kind: StageKind,
    pub input: Option<TopicId>,
    pub output: Option<TopicId>,
    pub affinity: Affinity,
    pub transform: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WiringError {
    #[error("stage {0}: source stages take no input and need an output")]
    SourceShape(StageId),
    #[error("stage {0}: sink stages need an input and take no output")]
    SinkShape(StageId),
    #[error("stage {0}: needs both an input and an output")]
    MissingTopic(StageId),
    #[error("stage {0}: bridge must connect topics in different clusters")]
    BridgeSameCluster(StageId),
    #[error("stage {0}: input and output in different clusters, kind must be bridge")]
    CrossClusterNonBridge(StageId),
    #[error("stage {stage}: unknown topic {topic}")]
    UnknownTopic { stage: StageId, topic: TopicId },
    #[error("stage {0}: unknown transform")]
    UnknownTransform(StageId),
    #[error("stage {stage}: affinity {affinity} cannot host a stage writing or reading only {cluster} topics")]
    AffinityMismatch {
        stage: StageId,
        affinity: Affinity,
        cluster: Cluster,
    },
    #[error("pipeline is not a linear chain at stage {0}")]
    NotLinear(StageId),
    #[error("pipeline is empty")]
    Empty,
    #[error("duplicate stage id {0}")]
    DuplicateStage(StageId),
}

impl StageSpec {
    /// Checks shape invariants against the cluster of every known topic.
    pub fn validate(&self, topics: &BTreeMap<TopicId, Cluster>) -> Result<(), WiringError> {
        let id = || self.stage_id.clone();
        match self.kind {
            StageKind::Source if self.input.is_some() || self.output.is_none() => {
                return Err(WiringError::SourceShape(id()))
            }
            StageKind::Sink if self.input.is_none() || self.output.is_some() => {
                return Err(WiringError::SinkShape(id()))
            }
            StageKind::Transform | StageKind::Bridge
                if self.input.is_none() || self.output.is_none() =>
            {
                return Err(WiringError::MissingTopic(id()))
            }
            _ => {}
        }
        let cluster_of = |t: &TopicId| {
            topics.get(t).copied().ok_or_else(|| WiringError::UnknownTopic {
                stage: id(),
                topic: t.clone(),
            })
        };
        let input = self.input.as_ref().map(cluster_of).transpose()?;
        let output = self.output.as_ref().map(cluster_of).transpose()?;
        if let (Some(i), Some(o)) = (input, output) {
            match (self.kind, i == o) {
                (StageKind::Bridge, true) => return Err(WiringError::BridgeSameCluster(id())),
                (StageKind::Transform, false) => {
                    return Err(WiringError::CrossClusterNonBridge(id()))
                }
                _ => {}
            }
        }
        if !super::transform::is_registered(&self.transform) {
            return Err(WiringError::UnknownTransform(id()));
        }
        // A non-bridge stage must run next to the topics it touches.
        if self.kind != StageKind::Bridge {
            if let Some(c) = input.or(output) {
                if !self.affinity.admits(c) {
                    return Err(WiringError::AffinityMismatch {
                        stage: id(),
                        affinity: self.affinity,
                        cluster: c,
                    });
                }
            }
        }
        Ok(())
    }

    /// Cluster whose manager places this stage. `any` resolves to the cluster
    /// of the stage's input topic (its output topic for sources).
    pub fn home_cluster(&self, topics: &BTreeMap<TopicId, Cluster>) -> Option<Cluster> {
        match self.affinity {
            Affinity::Edge => Some(Cluster::Edge),
            Affinity::Cloud => Some(Cluster::Cloud),
            Affinity::Any => self
                .input
                .as_ref()
                .or(self.output.as_ref())
                .and_then(|t| topics.get(t).copied()),
        }
    }
}

/// Linear chain of stages from one source to one sink.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub stages: Vec<StageSpec>,
}

impl PipelineSpec {
    pub fn validate(&self, topics: &BTreeMap<TopicId, Cluster>) -> Result<(), WiringError> {
        let first = self.stages.first().ok_or(WiringError::Empty)?;
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.stages {
            if !seen.insert(&s.stage_id) {
                return Err(WiringError::DuplicateStage(s.stage_id.clone()));
            }
            s.validate(topics)?;
        }
        if first.kind != StageKind::Source {
            return Err(WiringError::NotLinear(first.stage_id.clone()));
        }
        let last = self.stages.last().unwrap();
        if last.kind != StageKind::Sink {
            return Err(WiringError::NotLinear(last.stage_id.clone()));
        }
        for w in self.stages.windows(2) {
            if w[0].output.is_none() || w[0].output != w[1].input {
                return Err(WiringError::NotLinear(w[1].stage_id.clone()));
            }
        }
        Ok(())
    }

    pub fn stage(&self, id: &str) -> Option<&StageSpec> {
        self.stages.iter().find(|s| s.stage_id == id)
    }

    pub fn source(&self) -> Option<&StageSpec> {
        self.stages.first()
    }

    /// The topic the sink stage consumes.
    pub fn sink_topic(&self) -> Option<&TopicId> {
        self.stages.last().and_then(|s| s.input.as_ref())
    }

    /// Replaces the given stages' wiring and re-validates the chain.
    pub fn rewired(
        &self,
        fragment: &[StageSpec],
        topics: &BTreeMap<TopicId, Cluster>,
    ) -> Result<PipelineSpec, WiringError> {
        let mut next = self.clone();
        for f in fragment {
            match next.stages.iter_mut().find(|s| s.stage_id == f.stage_id) {
                Some(s) => *s = f.clone(),
                None => return Err(WiringError::NotLinear(f.stage_id.clone())),
            }
        }
        next.validate(topics)?;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topics() -> BTreeMap<TopicId, Cluster> {
        [
            ("ET-1", Cluster::Edge),
            ("ET-2", Cluster::Edge),
            ("CT-1", Cluster::Cloud),
            ("CT-2", Cluster::Cloud),
        ]
        .into_iter()
        .map(|(t, c)| (TopicId::new(t), c))
        .collect()
    }

    fn stage(id: &str, kind: StageKind, i: Option<&str>, o: Option<&str>, a: Affinity) -> StageSpec {
        StageSpec {
            stage_id: id.into(),
            kind,
            input: i.map(TopicId::new),
            output: o.map(TopicId::new),
            affinity: a,
            transform: "identity".into(),
        }
    }

    fn scenario1() -> PipelineSpec {
        PipelineSpec {
            stages: vec![
                stage("PC-1", StageKind::Source, None, Some("ET-1"), Affinity::Edge),
                stage("PC-2", StageKind::Bridge, Some("ET-1"), Some("CT-1"), Affinity::Edge),
                stage("PC-3", StageKind::Transform, Some("CT-1"), Some("CT-2"), Affinity::Cloud),
                stage("PC-4", StageKind::Sink, Some("CT-2"), None, Affinity::Cloud),
            ],
        }
    }

    #[test]
    fn scenario1_chain_is_valid() {
        scenario1().validate(&topics()).unwrap();
        assert_eq!(scenario1().sink_topic(), Some(&TopicId::new("CT-2")));
    }

    #[test]
    fn moving_pc3_to_the_edge_is_valid() {
        let frag = [
            stage("PC-2", StageKind::Transform, Some("ET-1"), Some("ET-2"), Affinity::Edge),
            stage("PC-3", StageKind::Bridge, Some("ET-2"), Some("CT-2"), Affinity::Edge),
        ];
        let p = scenario1().rewired(&frag, &topics()).unwrap();
        assert_eq!(p.stage("PC-3").unwrap().input, Some(TopicId::new("ET-2")));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let frag = [stage("PC-3", StageKind::Bridge, Some("ET-2"), Some("CT-2"), Affinity::Edge)];
        assert_eq!(
            scenario1().rewired(&frag, &topics()),
            Err(WiringError::NotLinear("PC-3".into()))
        );
    }

    #[test]
    fn bridge_within_one_cluster_is_rejected() {
        let s = stage("X", StageKind::Bridge, Some("ET-1"), Some("ET-2"), Affinity::Edge);
        assert_eq!(s.validate(&topics()), Err(WiringError::BridgeSameCluster("X".into())));
    }

    #[test]
    fn cross_cluster_transform_is_rejected() {
        let s = stage("X", StageKind::Transform, Some("ET-1"), Some("CT-1"), Affinity::Edge);
        assert_eq!(s.validate(&topics()), Err(WiringError::CrossClusterNonBridge("X".into())));
    }

    #[test]
    fn affinity_must_match_local_topics() {
        let s = stage("X", StageKind::Sink, Some("CT-2"), None, Affinity::Edge);
        assert!(matches!(s.validate(&topics()), Err(WiringError::AffinityMismatch { .. })));
    }

    #[test]
    fn any_affinity_follows_input_topic() {
        let s = stage("X", StageKind::Sink, Some("CT-2"), None, Affinity::Any);
        assert_eq!(s.home_cluster(&topics()), Some(Cluster::Cloud));
    }
}
