use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::dedup::DedupState;
use super::spec::StageKind;
use super::transform;
use crate::cluster::{ClusterConfig, DeployedStage, Directory};
use crate::log::{GroupState, LogError, LogMsg, Record, ReqId, TopicId};
use crate::msg::{Msg, Timer};
use crate::sim::{Cluster, Ctx, Detail, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageParams {
    pub batch: usize,
    pub request_timeout: u64,
    /// Wait before re-fetching an input that had nothing new.
    pub poll_interval: u64,
    pub retry_backoff: u64,
}

impl Default for StageParams {
    fn default() -> Self {
        StageParams {
            batch: 16,
            request_timeout: 200,
            poll_interval: 20,
            retry_backoff: 20,
        }
    }
}

/// What a runner needs from its host for one call.
pub struct StageEnv<'a> {
    pub config: &'a ClusterConfig,
    pub dir: &'a Directory,
    pub params: &'a StageParams,
    pub next_req: &'a mut ReqId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Loading,
    Fetching,
    Producing,
    Committing,
}

pub fn producer_id(node: &str) -> String {
    format!("cam-{node}")
}

fn seq_key(producer: &str) -> String {
    format!("producer/{producer}")
}

/// Synthetic camera frame for one source record.
pub fn synthetic_payload(producer: &str, seq: u64) -> Vec<u8> {
    format!("frame {producer} {seq}").into_bytes()
}

/// One placed stage on its host node.
///
/// Non-source stages loop: read the committed group position, fetch a batch,
/// drop already seen records, transform, produce and wait for the ack, then
/// commit the new position together with the dedup state. A crash anywhere
/// before the commit makes the batch run again.
#[derive(Debug)]
pub struct StageRunner {
    pub deployed: DeployedStage,
    pub gen: u64,
    phase: Phase,
    inflight: Option<(ReqId, TopicId)>,
    pos: u64,
    dedup: DedupState,
    batch_len: u64,
    fresh: Vec<(String, u64)>,
    outputs: Vec<Record>,
    producer: String,
    next_seq: u64,
    outbox: VecDeque<Record>,
    sending: usize,
    hints: BTreeMap<TopicId, NodeId>,
    rotation: usize,
}

impl StageRunner {
    pub fn new(deployed: DeployedStage, gen: u64, ctx: &mut Ctx<'_, Msg>) -> Self {
        let producer = producer_id(ctx.node);
        let next_seq = ctx
            .kernel
            .durable(ctx.node)
            .get(&seq_key(&producer))
            .and_then(|b| b.try_into().ok())
            .map_or(0, u64::from_be_bytes);
        StageRunner {
            deployed,
            gen,
            phase: Phase::Idle,
            inflight: None,
            pos: 0,
            dedup: DedupState::default(),
            batch_len: 0,
            fresh: Vec::new(),
            outputs: Vec::new(),
            producer,
            next_seq,
            outbox: VecDeque::new(),
            sending: 0,
            hints: BTreeMap::new(),
            rotation: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.deployed.spec.stage_id
    }

    fn kind(&self) -> StageKind {
        self.deployed.spec.kind
    }

    pub fn backlog(&self) -> usize {
        self.outbox.len()
    }

    pub fn start(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>) {
        ctx.emit(
            "stage_start",
            Detail::new()
                .with("stage", self.id())
                .with("kind", self.kind())
                .with("group", &self.deployed.group),
        );
        self.phase = match self.kind() {
            StageKind::Source => Phase::Idle,
            _ => Phase::Loading,
        };
        self.resume(ctx, env);
    }

    pub fn stop(&mut self, ctx: &mut Ctx<'_, Msg>) {
        ctx.emit("stage_stop", Detail::new().with("stage", self.id()));
    }

    /// Queues `count` new frames from this node's camera.
    pub fn generate(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>, count: u64) {
        if count == 0 {
            return;
        }
        let first = self.next_seq;
        for _ in 0..count {
            let seq = self.next_seq;
            self.next_seq += 1;
            self.outbox.push_back(Record {
                producer_id: self.producer.clone(),
                producer_seq: seq,
                payload: synthetic_payload(&self.producer, seq),
                origin_time: ctx.now(),
            });
        }
        ctx.emit(
            "generate",
            Detail::new()
                .with("stage", self.id())
                .with("producer", &self.producer)
                .with("first", first)
                .with("count", count),
        );
        if self.phase == Phase::Idle && self.inflight.is_none() {
            self.resume(ctx, env);
        }
    }

    fn remote_cluster(env: &StageEnv<'_>) -> Cluster {
        match env.config.cluster {
            Cluster::Edge => Cluster::Cloud,
            Cluster::Cloud => Cluster::Edge,
        }
    }

    /// Best guess at the leader of `topic`.
    fn target(&self, env: &StageEnv<'_>, topic: &TopicId) -> Option<NodeId> {
        if let Some(h) = self.hints.get(topic) {
            return Some(h.clone());
        }
        match env.config.topics.get(topic) {
            Some(a) => a.leader.clone(),
            None => {
                let nodes = env.dir.members(Self::remote_cluster(env));
                (!nodes.is_empty()).then(|| nodes[self.rotation % nodes.len()].clone())
            }
        }
    }

    fn request(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        env: &mut StageEnv<'_>,
        topic: TopicId,
        build: impl FnOnce(ReqId, TopicId) -> LogMsg,
    ) {
        let Some(to) = self.target(env, &topic) else {
            self.retry(ctx, env.params.retry_backoff);
            return;
        };
        let req = *env.next_req;
        *env.next_req += 1;
        ctx.send(&to, Msg::Log(build(req, topic.clone())));
        ctx.timer(
            env.params.request_timeout,
            Msg::Timer(Timer::RequestTimeout {
                stage: self.id().to_string(),
                req,
            }),
        );
        self.inflight = Some((req, topic));
    }

    fn retry(&mut self, ctx: &mut Ctx<'_, Msg>, delay: u64) {
        ctx.timer(
            delay,
            Msg::Timer(Timer::StageTick {
                stage: self.id().to_string(),
                gen: self.gen,
            }),
        );
    }

    /// Issues the request for the current phase.
    fn resume(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>) {
        let spec = self.deployed.spec.clone();
        match self.phase {
            Phase::Idle => {
                if self.kind() != StageKind::Source {
                    self.phase = Phase::Fetching;
                    self.resume(ctx, env);
                } else if !self.outbox.is_empty() {
                    self.sending = self.outbox.len().min(env.params.batch);
                    self.phase = Phase::Producing;
                    self.resume(ctx, env);
                }
            }
            Phase::Loading => {
                let group = self.deployed.group.clone();
                self.request(ctx, env, spec.input.unwrap(), |req, topic| {
                    LogMsg::FetchCommitted { req, topic, group }
                });
            }
            Phase::Fetching => {
                let (from, max) = (self.pos, env.params.batch);
                self.request(ctx, env, spec.input.unwrap(), |req, topic| LogMsg::Fetch {
                    req,
                    topic,
                    from,
                    max,
                });
            }
            Phase::Producing => {
                let records: Vec<Record> = match self.kind() {
                    StageKind::Source => self.outbox.iter().take(self.sending).cloned().collect(),
                    _ => self.outputs.clone(),
                };
                let stage = self.id().to_string();
                self.request(ctx, env, spec.output.unwrap(), |req, topic| LogMsg::Produce {
                    req,
                    topic,
                    records,
                    stage,
                });
            }
            Phase::Committing => {
                let mut dedup = self.dedup.clone();
                for (p, s) in &self.fresh {
                    dedup.insert(p, *s);
                }
                let state = GroupState {
                    offset: self.pos + self.batch_len,
                    metadata: dedup.encode(),
                };
                let group = self.deployed.group.clone();
                self.request(ctx, env, spec.input.unwrap(), |req, topic| {
                    LogMsg::CommitOffset {
                        req,
                        topic,
                        group,
                        state,
                    }
                });
            }
        }
    }

    pub fn on_tick(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>, gen: u64) {
        if gen == self.gen && self.inflight.is_none() {
            self.resume(ctx, env);
        }
    }

    pub fn on_timeout(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>, req: ReqId) {
        let Some((_, topic)) = self.inflight.take_if(|(r, _)| *r == req) else {
            return;
        };
        self.hints.remove(&topic);
        self.rotation += 1;
        self.resume(ctx, env);
    }

    /// Offers a reply; returns false if it belongs to another runner.
    pub fn on_reply(&mut self, ctx: &mut Ctx<'_, Msg>, env: &mut StageEnv<'_>, msg: &LogMsg) -> bool {
        let req = match msg {
            LogMsg::ProduceReply { req, .. }
            | LogMsg::FetchReply { req, .. }
            | LogMsg::CommitOffsetReply { req, .. }
            | LogMsg::FetchCommittedReply { req, .. } => *req,
            _ => return false,
        };
        let Some((_, topic)) = self.inflight.take_if(|(r, _)| *r == req) else {
            return false;
        };
        let err = match msg {
            LogMsg::FetchCommittedReply { result, .. } => match result {
                Ok(gs) => {
                    if *gs == GroupState::default() {
                        self.pos = self.deployed.start_offset;
                        self.dedup = DedupState::default();
                    } else {
                        self.pos = gs.offset;
                        self.dedup = DedupState::decode(&gs.metadata);
                    }
                    ctx.emit(
                        "stage_resume",
                        Detail::new()
                            .with("stage", self.id())
                            .with("group", &self.deployed.group)
                            .with("from", self.pos),
                    );
                    self.phase = Phase::Fetching;
                    None
                }
                Err(e) => Some(e.clone()),
            },
            LogMsg::FetchReply { result, .. } => match result {
                Ok(recs) if recs.is_empty() => {
                    self.retry(ctx, env.params.poll_interval);
                    return true;
                }
                Ok(recs) => {
                    self.process(ctx, &topic, recs);
                    None
                }
                Err(e) => Some(e.clone()),
            },
            LogMsg::ProduceReply { result, .. } => match result {
                Ok(_) if self.kind() == StageKind::Source => {
                    let last = self.outbox.drain(..self.sending).next_back();
                    if let Some(r) = last {
                        let next = (r.producer_seq + 1).to_be_bytes().to_vec();
                        ctx.store().put(seq_key(&self.producer), next);
                    }
                    // For a source, `in` counts frames taken from the camera.
                    ctx.emit(
                        "stage_step",
                        Detail::new()
                            .with("stage", self.id())
                            .with("in", self.sending)
                            .with("out", self.sending)
                            .with("offset", self.next_seq - self.outbox.len() as u64),
                    );
                    self.sending = 0;
                    self.phase = Phase::Idle;
                    None
                }
                Ok(_) => {
                    self.phase = Phase::Committing;
                    None
                }
                Err(e) => Some(e.clone()),
            },
            LogMsg::CommitOffsetReply { result, .. } => match result {
                Ok(()) => {
                    for (p, s) in self.fresh.drain(..) {
                        self.dedup.insert(&p, s);
                    }
                    self.pos += self.batch_len;
                    ctx.emit(
                        "stage_step",
                        Detail::new()
                            .with("stage", self.id())
                            .with("in", self.batch_len)
                            .with("out", self.outputs.len())
                            .with("offset", self.pos),
                    );
                    self.batch_len = 0;
                    self.outputs.clear();
                    self.phase = Phase::Fetching;
                    None
                }
                Err(LogError::OffsetRegression { current }) => {
                    // Someone else moved the group on; start over from it.
                    ctx.emit(
                        "stage_reload",
                        Detail::new().with("stage", self.id()).with("current", current),
                    );
                    self.fresh.clear();
                    self.outputs.clear();
                    self.batch_len = 0;
                    self.phase = Phase::Loading;
                    None
                }
                Err(e) => Some(e.clone()),
            },
            _ => unreachable!(),
        };
        match err {
            None => self.resume(ctx, env),
            Some(LogError::NotLeader { hint }) => {
                match hint {
                    Some(h) => {
                        self.hints.insert(topic, h);
                    }
                    None => {
                        self.hints.remove(&topic);
                        self.rotation += 1;
                    }
                }
                self.retry(ctx, env.params.retry_backoff);
            }
            Some(_) => self.retry(ctx, env.params.retry_backoff * 5),
        }
        true
    }

    fn process(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId, recs: &[Record]) {
        let f = transform::lookup(&self.deployed.spec.transform).unwrap_or(|r| Some(r.clone()));
        let mut seen = BTreeSet::new();
        self.fresh.clear();
        self.outputs.clear();
        for (i, r) in recs.iter().enumerate() {
            let id = r.identity();
            if self.dedup.contains(&id.0, id.1) || !seen.insert(id.clone()) {
                continue;
            }
            if self.kind() == StageKind::Sink {
                ctx.emit(
                    "sink_deliver",
                    Detail::new()
                        .with("stage", self.id())
                        .with("topic", topic)
                        .with("offset", self.pos + i as u64)
                        .with("producer", &id.0)
                        .with("seq", id.1),
                );
            } else if let Some(out) = f(r) {
                self.outputs.push(out);
            }
            self.fresh.push(id);
        }
        self.batch_len = recs.len() as u64;
        self.phase = if self.outputs.is_empty() {
            Phase::Committing
        } else {
            Phase::Producing
        };
    }
}
