//! One simulated machine: broker, optional master role, and stage host.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cluster::{ClusterConfig, Directory, Manager, ManagerParams, RaftParams, Role};
use crate::log::{Broker, BrokerParams, LogMsg, ReqId};
use crate::msg::{Msg, Timer};
use crate::pipeline::{StageEnv, StageId, StageParams, StageRunner};
use crate::sim::{Cluster, Ctx, Kernel, NodeId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeParams {
    pub broker: BrokerParams,
    pub raft: RaftParams,
    pub manager: ManagerParams,
    pub stage: StageParams,
}

/// Volatile state of a node. A crash drops the whole actor; a restart builds
/// a new one from the node's durable store.
#[derive(Debug)]
pub struct NodeActor {
    id: NodeId,
    cluster: Cluster,
    dir: Arc<Directory>,
    params: NodeParams,
    broker: Broker,
    manager: Option<Manager>,
    config: Arc<ClusterConfig>,
    runners: BTreeMap<StageId, StageRunner>,
    next_req: ReqId,
    gen: u64,
}

impl NodeActor {
    pub fn boot(
        kernel: &Kernel<Msg>,
        id: &str,
        dir: Arc<Directory>,
        params: NodeParams,
        initial: ClusterConfig,
    ) -> Self {
        let process = kernel.node(id).expect("node registered with the kernel");
        let manager = (dir.role_of(id) == Some(Role::Master)).then(|| {
            Manager::new(
                id,
                &dir.masters(process.cluster),
                initial.clone(),
                params.manager,
                params.raft,
                &process.durable,
            )
        });
        NodeActor {
            id: id.to_string(),
            cluster: process.cluster,
            broker: Broker::new(id, params.broker),
            manager,
            config: Arc::new(initial),
            runners: BTreeMap::new(),
            // Request ids never repeat across incarnations.
            next_req: process.incarnation << 32,
            gen: 0,
            dir,
            params,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cluster(&self) -> Cluster {
        self.cluster
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn broker(&self) -> &Broker {
        &self.broker
    }

    pub fn manager(&self) -> Option<&Manager> {
        self.manager.as_ref()
    }

    pub fn manager_mut(&mut self) -> Option<&mut Manager> {
        self.manager.as_mut()
    }

    pub fn runs(&self, stage: &str) -> bool {
        self.runners.contains_key(stage)
    }

    pub fn running(&self) -> impl Iterator<Item = &StageId> {
        self.runners.keys()
    }

    pub fn start(&mut self, ctx: &mut Ctx<'_, Msg>) {
        self.broker.start(ctx);
        self.send_heartbeats(ctx);
        if let Some(m) = &mut self.manager {
            m.start(ctx);
            ctx.timer(self.params.raft.tick, Msg::Timer(Timer::LeaderTick));
        }
    }

    fn send_heartbeats(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let epoch = self.config.epoch;
        for m in self.dir.masters(self.cluster) {
            if m == self.id {
                if let Some(mgr) = &mut self.manager {
                    mgr.on_heartbeat(&self.id, ctx.now());
                }
            } else {
                ctx.send(&m, Msg::Heartbeat { epoch });
            }
        }
        ctx.timer(
            self.params.manager.heartbeat_interval,
            Msg::Timer(Timer::Heartbeat),
        );
    }

    /// Starts `count` frames at this node's source stage. Returns false if the
    /// stage does not run here.
    pub fn generate(&mut self, ctx: &mut Ctx<'_, Msg>, stage: &str, count: u64) -> bool {
        let NodeActor {
            runners,
            config,
            dir,
            params,
            next_req,
            ..
        } = self;
        let Some(r) = runners.get_mut(stage) else {
            return false;
        };
        let mut env = StageEnv {
            config,
            dir,
            params: &params.stage,
            next_req,
        };
        r.generate(ctx, &mut env, count);
        true
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_, Msg>, from: Option<&str>, msg: Msg) {
        match msg {
            Msg::Timer(t) => self.on_timer(ctx, t),
            Msg::Log(m) => self.on_log(ctx, from.unwrap_or_default(), m),
            Msg::Raft(m) => {
                if let (Some(mgr), Some(from)) = (&mut self.manager, from) {
                    mgr.store.on_message(ctx, from, m);
                }
            }
            Msg::Heartbeat { epoch } => {
                if let (Some(mgr), Some(from)) = (&mut self.manager, from) {
                    mgr.on_heartbeat(from, ctx.now());
                    if mgr.is_leader() && epoch < mgr.config().epoch {
                        ctx.send(from, Msg::ConfigPush(Arc::new(mgr.config().clone())));
                    }
                }
            }
            Msg::ConfigPush(c) => {
                if c.cluster == self.cluster && c.epoch > self.config.epoch {
                    self.adopt(ctx, c);
                }
            }
            Msg::External(_) => {}
        }
        self.sync_config(ctx);
    }

    fn on_timer(&mut self, ctx: &mut Ctx<'_, Msg>, t: Timer) {
        match t {
            Timer::Replication => self.broker.on_replication_tick(ctx),
            Timer::Heartbeat => self.send_heartbeats(ctx),
            Timer::Election { token } => {
                if let Some(m) = &mut self.manager {
                    m.store.on_election_timeout(ctx, token);
                }
            }
            Timer::LeaderTick => {
                if let Some(m) = &mut self.manager {
                    m.on_tick(ctx);
                    ctx.timer(self.params.raft.tick, Msg::Timer(Timer::LeaderTick));
                }
            }
            Timer::PromotionDeadline { nonce } => {
                if let Some(m) = &mut self.manager {
                    m.on_promotion_deadline(ctx, nonce);
                }
            }
            Timer::StageTick { stage, gen } => {
                self.with_runner(ctx, &stage, |r, ctx, env| r.on_tick(ctx, env, gen));
            }
            Timer::RequestTimeout { stage, req } => {
                self.with_runner(ctx, &stage, |r, ctx, env| r.on_timeout(ctx, env, req));
            }
        }
    }

    fn with_runner(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        stage: &str,
        f: impl FnOnce(&mut StageRunner, &mut Ctx<'_, Msg>, &mut StageEnv<'_>),
    ) {
        let NodeActor {
            runners,
            config,
            dir,
            params,
            next_req,
            ..
        } = self;
        if let Some(r) = runners.get_mut(stage) {
            let mut env = StageEnv {
                config,
                dir,
                params: &params.stage,
                next_req,
            };
            f(r, ctx, &mut env);
        }
    }

    fn on_log(&mut self, ctx: &mut Ctx<'_, Msg>, from: &str, m: LogMsg) {
        match &m {
            LogMsg::ProduceReply { .. }
            | LogMsg::FetchReply { .. }
            | LogMsg::CommitOffsetReply { .. }
            | LogMsg::FetchCommittedReply { .. } => {
                let NodeActor {
                    runners,
                    config,
                    dir,
                    params,
                    next_req,
                    ..
                } = self;
                let mut env = StageEnv {
                    config,
                    dir,
                    params: &params.stage,
                    next_req,
                };
                for r in runners.values_mut() {
                    if r.on_reply(ctx, &mut env, &m) {
                        break;
                    }
                }
            }
            LogMsg::StateReply {
                topic,
                nonce,
                last_epoch,
                len,
            } => {
                if let Some(mgr) = &mut self.manager {
                    mgr.on_state_reply(from, topic, *nonce, *last_epoch, *len);
                }
            }
            _ => self.broker.on_message(ctx, from, m),
        }
    }

    /// Picks up configuration committed by this node's own master role.
    fn sync_config(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let Some(mgr) = &mut self.manager else { return };
        if mgr.config().epoch <= self.config.epoch {
            return;
        }
        let c = Arc::new(mgr.config().clone());
        if mgr.is_leader() {
            for n in self.dir.members(self.cluster) {
                if n != self.id {
                    ctx.send(&n, Msg::ConfigPush(c.clone()));
                }
            }
            mgr.reconcile(ctx);
        }
        self.adopt(ctx, c);
    }

    fn adopt(&mut self, ctx: &mut Ctx<'_, Msg>, c: Arc<ClusterConfig>) {
        self.config = c;
        self.broker.apply_assignments(ctx, &self.config.topics);
        let want: BTreeMap<_, _> = self
            .config
            .placements
            .iter()
            .filter(|(_, n)| n.as_deref() == Some(self.id.as_str()))
            .filter_map(|(s, _)| self.config.stages.get(s).map(|d| (s.clone(), d.clone())))
            .collect();
        let stale: Vec<_> = self
            .runners
            .iter()
            .filter(|(s, r)| want.get(*s) != Some(&r.deployed))
            .map(|(s, _)| s.clone())
            .collect();
        for s in stale {
            if let Some(mut r) = self.runners.remove(&s) {
                r.stop(ctx);
            }
        }
        for (s, d) in want {
            if self.runners.contains_key(&s) {
                continue;
            }
            self.gen += 1;
            let r = StageRunner::new(d, self.gen, ctx);
            self.runners.insert(s.clone(), r);
            self.with_runner(ctx, &s, |r, ctx, env| r.start(ctx, env));
        }
    }
}
