//! Randomized append/crash/promote schedules against one 3-replica topic,
//! compared with an in-memory log that replays the same appends without
//! failures.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use edgeplane_core::log::{choose_leader, Broker, BrokerParams, LogMsg, Record, TopicAssignment, TopicId};
use edgeplane_core::msg::{Msg, Timer};
use edgeplane_core::sim::{Ctx, Dispatch, Kernel};
use edgeplane_core::{Cluster, NetConfig, SimTime};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

const BROKERS: [&str; 3] = ["B-1", "B-2", "B-3"];
const CLIENT: &str = "C";
const PRODUCERS: usize = 2;
const REQUEST_TIMEOUT: u64 = 200;
const BACKOFF: u64 = 20;
const SETTLE: u64 = 4000;
pub const CASES: u32 = 500;

// Totals across executed cases, reported as evidence that schedules do
// exercise acks and leader changes.
static ACKED: AtomicU64 = AtomicU64::new(0);
static FAILOVERS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub enum Op {
    Append { producer: usize, count: u64 },
    Crash(usize),
    Restart(usize),
    Promote,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..PRODUCERS, 1u64..12).prop_map(|(producer, count)| Op::Append { producer, count }),
        2 => (0..3usize).prop_map(Op::Crash),
        2 => (0..3usize).prop_map(Op::Restart),
        1 => Just(Op::Promote),
    ]
}

pub fn schedule() -> impl Strategy<Value = (u64, Vec<(u64, Op)>)> {
    (any::<u64>(), prop::collection::vec((0u64..400, op()), 4..30))
}

fn topic() -> TopicId {
    TopicId::new("T")
}

#[derive(Default)]
struct Producer {
    next_seq: u64,
    unacked: VecDeque<Record>,
    inflight: Option<(u64, usize)>,
}

/// Test client on node "C". One outstanding produce per producer, retried
/// until acknowledged.
struct Client {
    producers: Vec<Producer>,
    next_req: u64,
    acked: BTreeSet<(String, u64)>,
    leader: String,
}

impl Client {
    fn send(&mut self, k: &mut Kernel<Msg>, p: usize) {
        let prod = &mut self.producers[p];
        if prod.inflight.is_some() || prod.unacked.is_empty() {
            return;
        }
        let n = prod.unacked.len().min(8);
        let req = self.next_req;
        self.next_req += 1;
        prod.inflight = Some((req, n));
        let records: Vec<_> = prod.unacked.iter().take(n).cloned().collect();
        let msg = LogMsg::Produce {
            req,
            topic: topic(),
            records,
            stage: pid(p),
        };
        k.send(CLIENT, &self.leader, Msg::Log(msg));
        k.set_timer(
            CLIENT,
            REQUEST_TIMEOUT,
            Msg::Timer(Timer::RequestTimeout { stage: pid(p), req }),
        );
    }

    fn producer_of(&self, req: u64) -> Option<usize> {
        self.producers
            .iter()
            .position(|p| p.inflight.is_some_and(|(r, _)| r == req))
    }

    fn handle(&mut self, k: &mut Kernel<Msg>, msg: Msg) {
        match msg {
            Msg::Log(LogMsg::ProduceReply { req, result, .. }) => {
                let Some(p) = self.producer_of(req) else { return };
                let (_, n) = self.producers[p].inflight.take().unwrap();
                match result {
                    Ok(_) => {
                        for r in self.producers[p].unacked.drain(..n) {
                            self.acked.insert(r.identity());
                        }
                        self.send(k, p);
                    }
                    Err(_) => {
                        k.set_timer(CLIENT, BACKOFF, Msg::Timer(Timer::StageTick { stage: pid(p), gen: 0 }));
                    }
                }
            }
            Msg::Timer(Timer::RequestTimeout { req, .. }) => {
                if let Some(p) = self.producer_of(req) {
                    self.producers[p].inflight = None;
                    self.send(k, p);
                }
            }
            Msg::Timer(Timer::StageTick { stage, .. }) => {
                let p: usize = stage[1..].parse().unwrap();
                self.send(k, p);
            }
            _ => {}
        }
    }
}

struct Harness {
    kernel: Kernel<Msg>,
    brokers: BTreeMap<String, Option<Broker>>,
    assignment: TopicAssignment,
    client: Client,
}

fn pid(p: usize) -> String {
    format!("p{p}")
}

impl Harness {
    fn new(seed: u64) -> Self {
        let mut kernel = Kernel::new(seed, NetConfig::default());
        for b in BROKERS {
            kernel.add_node(b, Cluster::Edge);
        }
        kernel.add_node(CLIENT, Cluster::Edge);
        let mut h = Harness {
            kernel,
            brokers: BTreeMap::new(),
            assignment: TopicAssignment {
                rf: 3,
                replicas: BROKERS.iter().map(|b| b.to_string()).collect(),
                leader: Some(BROKERS[0].to_string()),
                leader_epoch: 1,
            },
            client: Client {
                producers: (0..PRODUCERS).map(|_| Producer::default()).collect(),
                next_req: 0,
                acked: BTreeSet::new(),
                leader: BROKERS[0].to_string(),
            },
        };
        for b in BROKERS {
            h.boot(b);
        }
        h
    }

    fn boot(&mut self, id: &str) {
        let mut b = Broker::new(id, BrokerParams::default());
        let topics = BTreeMap::from([(topic(), self.assignment.clone())]);
        let mut ctx = Ctx::new(&mut self.kernel, id);
        b.apply_assignments(&mut ctx, &topics);
        b.start(&mut ctx);
        self.brokers.insert(id.to_string(), Some(b));
    }

    fn down(&self) -> usize {
        self.brokers.values().filter(|b| b.is_none()).count()
    }

    /// Manager-directed promotion: highest (epoch, length) among the live
    /// replicas.
    fn promote(&mut self) {
        let t = topic();
        let reports: Vec<_> = self
            .brokers
            .iter()
            .filter_map(|(id, b)| {
                let log = b.as_ref()?.log(&t)?;
                Some((id.clone(), log.last_epoch(), log.len()))
            })
            .collect();
        // Same rule as the manager: a majority must report.
        if reports.len() < self.assignment.majority() {
            return;
        }
        let leader = choose_leader(&reports).unwrap();
        self.client.leader = leader.clone();
        self.assignment.leader = Some(leader);
        self.assignment.leader_epoch += 1;
        let topics = BTreeMap::from([(t, self.assignment.clone())]);
        for (id, b) in self.brokers.iter_mut() {
            if let Some(b) = b {
                b.apply_assignments(&mut Ctx::new(&mut self.kernel, id), &topics);
            }
        }
    }

    fn apply_op(&mut self, op: &Op) {
        match *op {
            Op::Append { producer, count } => {
                let now = self.kernel.now();
                let p = &mut self.client.producers[producer];
                for _ in 0..count {
                    p.unacked.push_back(Record {
                        producer_id: pid(producer),
                        producer_seq: p.next_seq,
                        payload: format!("{producer}/{}", p.next_seq).into_bytes(),
                        origin_time: now,
                    });
                    p.next_seq += 1;
                }
                self.client.send(&mut self.kernel, producer);
            }
            Op::Crash(i) => {
                // Keep at least one replica alive at all times.
                if self.down() < 2 && self.kernel.crash_node(BROKERS[i]) {
                    self.brokers.insert(BROKERS[i].to_string(), None);
                }
            }
            Op::Restart(i) => {
                if self.kernel.restart_node(BROKERS[i]) {
                    self.boot(BROKERS[i]);
                }
            }
            Op::Promote => self.promote(),
        }
    }

    fn run_until(&mut self, until: SimTime) {
        let Harness {
            kernel,
            brokers,
            client,
            ..
        } = self;
        kernel
            .run_until(until, |k, d| match d {
                Dispatch::Message { to, msg, .. } if to == CLIENT => client.handle(k, msg),
                Dispatch::Timer { node, msg } if node == CLIENT => client.handle(k, msg),
                Dispatch::Message {
                    from,
                    to,
                    msg: Msg::Log(m),
                } => {
                    if let Some(Some(b)) = brokers.get_mut(&to) {
                        b.on_message(&mut Ctx::new(k, &to), from.as_deref().unwrap_or(""), m);
                    }
                }
                Dispatch::Timer {
                    node,
                    msg: Msg::Timer(Timer::Replication),
                } => {
                    if let Some(Some(b)) = brokers.get_mut(&node) {
                        b.on_replication_tick(&mut Ctx::new(k, &node));
                    }
                }
                _ => {}
            })
            .unwrap();
    }

    fn committed(&self, id: &str) -> Option<Vec<Record>> {
        let b = self.brokers[id].as_ref()?;
        let t = topic();
        let log = b.log(&t)?;
        let n = b.commit_len(&t)? as usize;
        Some(log.records()[..n].to_vec())
    }

    /// Committed prefixes of live replicas agree record for record.
    fn prefix_consistent(&self) -> Result<(), String> {
        let views: Vec<_> = BROKERS
            .iter()
            .filter_map(|b| self.committed(b).map(|c| (b, c)))
            .collect();
        for (a, va) in &views {
            for (b, vb) in &views {
                let n = va.len().min(vb.len());
                if va[..n] != vb[..n] {
                    return Err(format!("{a} and {b} disagree below offset {n}"));
                }
            }
        }
        Ok(())
    }
}

type Identity = (String, u64);

fn oracle(ops: &[(u64, Op)]) -> Vec<Identity> {
    let mut next = [0u64; PRODUCERS];
    let mut log = Vec::new();
    for (_, op) in ops {
        if let Op::Append { producer, count } = op {
            for _ in 0..*count {
                log.push((pid(*producer), next[*producer]));
                next[*producer] += 1;
            }
        }
    }
    log
}

fn per_producer(ids: impl Iterator<Item = Identity>) -> BTreeMap<String, Vec<u64>> {
    let mut out: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for id in ids {
        if seen.insert(id.clone()) {
            out.entry(id.0).or_default().push(id.1);
        }
    }
    out
}

pub fn run_case(seed: u64, ops: &[(u64, Op)]) -> Result<(), String> {
    let mut h = Harness::new(seed);
    for (gap, op) in ops {
        let t = h.kernel.now() + *gap;
        h.run_until(t);
        h.apply_op(op);
        h.prefix_consistent()?;
    }
    if h.assignment.leader_epoch > 1 {
        FAILOVERS.fetch_add(1, Ordering::Relaxed);
    }
    for b in BROKERS {
        if h.kernel.restart_node(b) {
            h.boot(b);
        }
    }
    // Promote once more so a leader sits on a node that is up, then let
    // replication and client retries drain.
    h.promote();
    let t = h.kernel.now() + SETTLE;
    h.run_until(t);
    h.prefix_consistent()?;

    let leader = h.assignment.leader.clone().unwrap();
    let final_log = h.committed(&leader).ok_or("leader holds no replica")?;
    let expected = oracle(ops);
    let expected_set: BTreeSet<_> = expected.iter().cloned().collect();
    let present: BTreeSet<_> = final_log.iter().map(Record::identity).collect();

    // Durability: every acknowledged record survives.
    if let Some(id) = h.client.acked.iter().find(|id| !present.contains(*id)) {
        return Err(format!("acked {id:?} missing from the final log"));
    }
    // Nothing appears that the oracle never appended.
    if let Some(id) = present.iter().find(|id| !expected_set.contains(*id)) {
        return Err(format!("phantom record {id:?}"));
    }
    // Density and offset stability: each ack names the offset the record
    // still occupies.
    for e in h.kernel.trace().iter().filter(|e| e.kind == "ack") {
        let off = e.get_u64("offset").unwrap() as usize;
        let id = (e.get("producer").unwrap().to_string(), e.get_u64("seq").unwrap());
        match final_log.get(off) {
            Some(r) if r.identity() == id => {}
            other => {
                return Err(format!(
                    "ack of {id:?} at offset {off} but final log has {:?}",
                    other.map(Record::identity)
                ))
            }
        }
    }
    // Producer order: the deduplicated log lists each producer's records in
    // the oracle's order, and with every node back up all of them land.
    let got = per_producer(final_log.iter().map(Record::identity));
    let want = per_producer(expected.into_iter());
    if got != want {
        return Err(format!("per-producer sequences differ: got {got:?}, want {want:?}"));
    }
    ACKED.fetch_add(h.client.acked.len() as u64, Ordering::Relaxed);
    Ok(())
}

pub fn run_suite() -> Result<String, String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let result = runner.run(&schedule(), |(seed, ops)| {
        run_case(seed, &ops).map_err(TestCaseError::fail)
    });
    match result {
        Ok(()) => Ok(format!(
            "cases={CASES} acked_records={} cases_with_failover={}",
            ACKED.load(Ordering::Relaxed),
            FAILOVERS.load(Ordering::Relaxed)
        )),
        Err(e) => Err(e.to_string()),
    }
}
