//! A complete simulated deployment: kernel, node actors and both clusters.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cluster::{
    degraded_mode_status, ClusterConfig, ConfigCommand, DegradedStatus, DeployedStage,
    Directory, Health, Manifest, NodeDescriptor, Role,
};
use crate::error::SimError;
use crate::log::{decode_segment, Record, TopicId};
use crate::msg::{External, Msg};
use crate::node::{NodeActor, NodeParams};
use crate::pipeline::{PipelineSpec, RewireEntry, StageId};
use crate::sim::{
    Cluster, Ctx, Detail, Dispatch, FaultAction, Kernel, NetConfig, NetDomain, NodeId, SimTime,
    TraceEvent,
};

/// Delay before a generate request for a source that runs nowhere is retried.
pub const WORKLOAD_RETRY: u64 = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicDecl {
    pub id: TopicId,
    pub cluster: Cluster,
    pub rf: usize,
}

#[derive(Debug, Clone)]
pub struct WorldSetup {
    pub seed: u64,
    pub net: NetConfig,
    pub nodes: Vec<NodeDescriptor>,
    pub topics: Vec<TopicDecl>,
    pub pipeline: PipelineSpec,
    pub re_replication: bool,
    pub params: NodeParams,
}

/// Final content of one topic replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicDump {
    pub topic: TopicId,
    pub node: NodeId,
    pub records: Vec<Record>,
}

impl TopicDump {
    pub fn file_name(&self) -> String {
        format!("{}.{}.seg", self.topic, self.node)
    }
}

struct Actors {
    nodes: BTreeMap<NodeId, Option<NodeActor>>,
    dir: Arc<Directory>,
    params: NodeParams,
    initial: BTreeMap<Cluster, ClusterConfig>,
    pipeline: PipelineSpec,
    topic_clusters: BTreeMap<TopicId, Cluster>,
    deployed: BTreeMap<StageId, DeployedStage>,
    degraded: BTreeMap<Cluster, DegradedStatus>,
}

pub struct World {
    kernel: Kernel<Msg>,
    actors: Actors,
}

fn invariant(message: impl Into<String>) -> SimError {
    SimError::Invariant {
        time: SimTime::ZERO,
        message: message.into(),
    }
}

impl World {
    pub fn new(setup: WorldSetup) -> Result<World, SimError> {
        let topic_clusters: BTreeMap<TopicId, Cluster> = setup
            .topics
            .iter()
            .map(|t| (t.id.clone(), t.cluster))
            .collect();
        setup
            .pipeline
            .validate(&topic_clusters)
            .map_err(|e| invariant(e.to_string()))?;
        let mut kernel = Kernel::new(setup.seed, setup.net);
        for n in &setup.nodes {
            kernel.add_node(n.node_id.clone(), n.cluster);
        }
        let dir = Arc::new(Directory::new(
            setup
                .nodes
                .iter()
                .map(|n| (n.node_id.clone(), n.cluster, n.role)),
        ));
        let mut deployed = BTreeMap::new();
        let mut initial = BTreeMap::new();
        for c in Cluster::ALL {
            let mut manifest = Manifest {
                re_replication: setup.re_replication,
                ..Manifest::default()
            };
            for s in &setup.pipeline.stages {
                let home = s
                    .home_cluster(&topic_clusters)
                    .ok_or_else(|| invariant(format!("stage {} has no home cluster", s.stage_id)))?;
                if home == c {
                    let d = DeployedStage::new(s.clone());
                    deployed.insert(s.stage_id.clone(), d.clone());
                    manifest.stages.push(d);
                }
            }
            manifest.topics = setup
                .topics
                .iter()
                .filter(|t| t.cluster == c)
                .map(|t| (t.id.clone(), t.rf))
                .collect();
            for m in dir.masters(c) {
                manifest.save(kernel.durable_mut(&m));
            }
            let members = setup.nodes.iter().filter(|n| n.cluster == c).map(|n| NodeDescriptor {
                status: Health::Up,
                ..n.clone()
            });
            initial.insert(c, ClusterConfig::initial(c, members));
        }
        let mut world = World {
            kernel,
            actors: Actors {
                nodes: BTreeMap::new(),
                dir,
                params: setup.params,
                initial,
                pipeline: setup.pipeline,
                topic_clusters,
                deployed,
                degraded: Cluster::ALL.iter().map(|c| (*c, DegradedStatus::default())).collect(),
            },
        };
        for n in &setup.nodes {
            world.actors.boot(&mut world.kernel, &n.node_id);
        }
        Ok(world)
    }

    pub fn kernel(&self) -> &Kernel<Msg> {
        &self.kernel
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn trace(&self) -> &[TraceEvent] {
        self.kernel.trace()
    }

    pub fn actor(&self, id: &str) -> Option<&NodeActor> {
        self.actors.nodes.get(id).and_then(Option::as_ref)
    }

    pub fn pipeline(&self) -> &PipelineSpec {
        &self.actors.pipeline
    }

    pub fn topic_clusters(&self) -> &BTreeMap<TopicId, Cluster> {
        &self.actors.topic_clusters
    }

    /// Master currently leading the configuration store of `cluster`.
    pub fn config_leader(&self, cluster: Cluster) -> Option<NodeId> {
        self.actors.leader_of(&self.kernel, cluster)
    }

    /// Node currently running `stage`.
    pub fn host_of(&self, stage: &str) -> Option<NodeId> {
        self.actors
            .nodes
            .values()
            .flatten()
            .find(|a| a.runs(stage))
            .map(|a| a.id().to_string())
    }

    /// Records a harness event with no node attribution.
    pub fn emit(&mut self, kind: &str, detail: Detail) {
        self.kernel.emit(None, kind, detail);
    }

    pub fn schedule_fault(&mut self, at: SimTime, fault: FaultAction) -> Result<(), SimError> {
        self.kernel.schedule_fault(at, fault).map(|_| ())
    }

    pub fn schedule_generate(&mut self, at: SimTime, stage: &str, count: u64) -> Result<(), SimError> {
        let msg = Msg::External(External::Generate {
            stage: stage.to_string(),
            count,
        });
        self.kernel.schedule_external(at, msg).map(|_| ())
    }

    pub fn schedule_rewire(&mut self, at: SimTime, entries: Vec<RewireEntry>) -> Result<(), SimError> {
        let msg = Msg::External(External::Rewire { entries });
        self.kernel.schedule_external(at, msg).map(|_| ())
    }

    /// Crashes a node now, outside the fault schedule.
    pub fn crash(&mut self, id: &str) -> bool {
        if !self.kernel.crash_node(id) {
            return false;
        }
        self.actors.nodes.insert(id.to_string(), None);
        self.actors.update_degraded(&mut self.kernel);
        true
    }

    pub fn restart(&mut self, id: &str) -> bool {
        if !self.kernel.restart_node(id) {
            return false;
        }
        self.actors.boot(&mut self.kernel, id);
        self.actors.update_degraded(&mut self.kernel);
        true
    }

    pub fn run_until(&mut self, until: SimTime) -> Result<(), SimError> {
        let World { kernel, actors } = self;
        kernel.run_until(until, |k, d| actors.dispatch(k, d))?;
        match kernel.violations().first() {
            Some(v) => Err(SimError::Invariant {
                time: kernel.now(),
                message: v.clone(),
            }),
            None => Ok(()),
        }
    }

    /// Every replica segment held by a node that is up.
    pub fn dumps(&self) -> Result<Vec<TopicDump>, SimError> {
        let mut out = Vec::new();
        for topic in self.actors.topic_clusters.keys() {
            for p in self.kernel.nodes() {
                if !self.kernel.is_up(&p.id) {
                    continue;
                }
                let Some(bytes) = p.durable.get(&format!("log/{topic}")) else {
                    continue;
                };
                let records = decode_segment(bytes).map_err(|e| SimError::Dump {
                    file: format!("{topic}.{}.seg", p.id),
                    message: e.to_string(),
                })?;
                out.push(TopicDump {
                    topic: topic.clone(),
                    node: p.id.clone(),
                    records,
                });
            }
        }
        Ok(out)
    }
}

impl Actors {
    fn boot(&mut self, kernel: &mut Kernel<Msg>, id: &str) {
        let cluster = kernel.cluster_of(id).expect("registered node");
        let mut actor = NodeActor::boot(
            kernel,
            id,
            self.dir.clone(),
            self.params,
            self.initial[&cluster].clone(),
        );
        actor.start(&mut Ctx::new(kernel, id));
        self.nodes.insert(id.to_string(), Some(actor));
    }

    fn leader_of(&self, kernel: &Kernel<Msg>, cluster: Cluster) -> Option<NodeId> {
        self.nodes
            .values()
            .flatten()
            .filter(|a| a.cluster() == cluster)
            .find(|a| {
                a.manager()
                    .is_some_and(|m| m.is_leader() && m.store.has_quorum(kernel.now()))
            })
            .map(|a| a.id().to_string())
    }

    fn dispatch(&mut self, k: &mut Kernel<Msg>, d: Dispatch<Msg>) {
        match d {
            Dispatch::Message { from, to, msg } => {
                if let Some(Some(a)) = self.nodes.get_mut(&to) {
                    a.handle(&mut Ctx::new(k, &to), from.as_deref(), msg);
                }
            }
            Dispatch::Timer { node, msg } => {
                if let Some(Some(a)) = self.nodes.get_mut(&node) {
                    a.handle(&mut Ctx::new(k, &node), None, msg);
                }
            }
            Dispatch::Crashed(n) => {
                self.nodes.insert(n, None);
                self.update_degraded(k);
            }
            Dispatch::Restarted(n) => {
                self.boot(k, &n);
                self.update_degraded(k);
            }
            Dispatch::Partition { .. } => self.update_degraded(k),
            Dispatch::External(Msg::External(e)) => self.external(k, e),
            Dispatch::External(_) => {}
        }
    }

    fn external(&mut self, k: &mut Kernel<Msg>, e: External) {
        match e {
            External::Generate { stage, count } => {
                let host = self
                    .nodes
                    .iter_mut()
                    .filter_map(|(id, a)| a.as_mut().map(|a| (id.clone(), a)))
                    .find(|(_, a)| a.runs(&stage));
                match host {
                    Some((id, a)) => {
                        a.generate(&mut Ctx::new(k, &id), &stage, count);
                    }
                    None => {
                        k.emit(
                            None,
                            "workload_deferred",
                            Detail::new().with("stage", &stage).with("count", count),
                        );
                        let at = k.now() + WORKLOAD_RETRY;
                        let msg = Msg::External(External::Generate { stage, count });
                        k.schedule_external(at, msg).expect("future time");
                    }
                }
            }
            External::Rewire { entries } => self.rewire(k, entries),
        }
    }

    fn reject_rewire(k: &mut Kernel<Msg>, reason: &str) {
        k.emit(None, "rewire_rejected", Detail::new().with("reason", reason));
    }

    /// Validates a rewiring against the whole pipeline and submits one
    /// transaction to each affected cluster.
    fn rewire(&mut self, k: &mut Kernel<Msg>, entries: Vec<RewireEntry>) {
        let specs: Vec<_> = entries.iter().map(|e| e.spec.clone()).collect();
        let next = match self.pipeline.rewired(&specs, &self.topic_clusters) {
            Ok(p) => p,
            Err(e) => return Self::reject_rewire(k, &e.to_string()),
        };
        let mut per_cluster: BTreeMap<Cluster, (Vec<DeployedStage>, Vec<StageId>)> =
            BTreeMap::new();
        let mut deployed = self.deployed.clone();
        for e in &entries {
            let id = &e.spec.stage_id;
            let old = &self.deployed[id];
            let old_home = old.spec.home_cluster(&self.topic_clusters).unwrap();
            let new_home = e.spec.home_cluster(&self.topic_clusters).unwrap();
            let d = if old.spec.input != e.spec.input || e.offset.is_some() {
                DeployedStage {
                    spec: e.spec.clone(),
                    group: format!("{id}.g{}", k.now()),
                    start_offset: e.offset.unwrap_or(0),
                }
            } else {
                DeployedStage {
                    spec: e.spec.clone(),
                    ..old.clone()
                }
            };
            per_cluster.entry(new_home).or_default().0.push(d.clone());
            if old_home != new_home {
                per_cluster.entry(old_home).or_default().1.push(id.clone());
            }
            deployed.insert(id.clone(), d);
        }
        let mut leaders = Vec::new();
        for c in per_cluster.keys() {
            match self.leader_of(k, *c) {
                Some(l) => leaders.push(l),
                None => return Self::reject_rewire(k, &format!("no_leader_{c}")),
            }
        }
        for ((c, (upserts, removes)), leader) in per_cluster.into_iter().zip(leaders) {
            k.emit(
                None,
                "rewire_submit",
                Detail::new()
                    .with("cluster", c)
                    .with("leader", &leader)
                    .with("upserts", upserts.len())
                    .with("removes", removes.len()),
            );
            let m = self
                .nodes
                .get_mut(&leader)
                .and_then(Option::as_mut)
                .and_then(NodeActor::manager_mut)
                .expect("leader found above");
            m.enqueue(ConfigCommand::Rewire { upserts, removes })
                .expect("leader found above");
        }
        self.pipeline = next;
        self.deployed = deployed;
    }

    fn update_degraded(&mut self, k: &mut Kernel<Msg>) {
        let wan = k.link(NetDomain::Wan).partitioned;
        for c in Cluster::ALL {
            let masters = self.dir.masters(c);
            let up = masters.iter().filter(|m| k.is_up(m)).count();
            let reachable = if k.link(c.lan()).partitioned { up.min(1) } else { up };
            let status = degraded_mode_status(reachable, masters.len(), wan);
            if self.degraded[&c] != status {
                self.degraded.insert(c, status);
                k.emit(
                    None,
                    "degraded",
                    Detail::new().with("cluster", c).with("status", status),
                );
            }
        }
    }
}

/// Descriptor helper for building topologies in code.
pub fn node(id: &str, cluster: Cluster, role: Role) -> NodeDescriptor {
    NodeDescriptor {
        node_id: id.to_string(),
        cluster,
        role,
        status: Health::Up,
    }
}
