//! Deterministic discrete-event kernel.
//!
//! The kernel owns virtual time, the event queue, the simulated network and
//! every node's durable store. Components never run on their own: the kernel
//! pops the next `(time, seq)` event and hands it to a dispatch callback.
//! Events at the same instant run in insertion order, which together with a
//! single seeded generator makes a run a pure function of its inputs.

mod net;
mod store;
mod time;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use net::{Cluster, LinkState, NetConfig, NetDomain};
pub use store::DurableStore;
pub use time::SimTime;
pub use trace::{Detail, TraceEvent};

use crate::error::SimError;
use net::Links;

pub type NodeId = String;
pub type EventId = u64;

/// Implemented by message types so deliveries can be named in the trace.
pub trait MessageKind {
    fn kind(&self) -> &'static str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Up,
    Crashed,
}

/// Kernel-side view of a simulated machine.
///
/// Volatile state lives in whatever actor the dispatcher keeps for the node;
/// the kernel only guarantees that `durable` is untouched by crashes.
#[derive(Debug, Clone)]
pub struct NodeProcess {
    pub id: NodeId,
    pub cluster: Cluster,
    pub status: NodeStatus,
    /// Bumped on every restart. Timers set by an older incarnation never fire.
    pub incarnation: u64,
    pub durable: DurableStore,
}

/// Fault actions the kernel applies itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultAction {
    Crash(NodeId),
    Restart(NodeId),
    Partition(NetDomain),
    Heal(NetDomain),
}

impl fmt::Display for FaultAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultAction::Crash(n) => write!(f, "crash {n}"),
            FaultAction::Restart(n) => write!(f, "restart {n}"),
            FaultAction::Partition(d) => write!(f, "partition {d}"),
            FaultAction::Heal(d) => write!(f, "heal {d}"),
        }
    }
}

/// What the dispatch callback receives.
#[derive(Debug)]
pub enum Dispatch<M> {
    Message {
        from: Option<NodeId>,
        to: NodeId,
        msg: M,
    },
    Timer {
        node: NodeId,
        msg: M,
    },
    Crashed(NodeId),
    Restarted(NodeId),
    Partition {
        domain: NetDomain,
        partitioned: bool,
    },
    External(M),
}

#[derive(Debug)]
enum Pending<M> {
    Message {
        from: Option<NodeId>,
        to: NodeId,
        msg: M,
    },
    Timer {
        node: NodeId,
        incarnation: u64,
        msg: M,
    },
    Fault(FaultAction),
    External(M),
}

struct Scheduled<M> {
    time: SimTime,
    seq: u64,
    event: Pending<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl<M> Eq for Scheduled<M> {}

impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Scheduled<M> {
    // Reversed so the max-heap pops the earliest (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

pub struct Kernel<M> {
    now: SimTime,
    next_seq: u64,
    trace_seq: u64,
    queue: BinaryHeap<Scheduled<M>>,
    nodes: BTreeMap<NodeId, NodeProcess>,
    links: Links,
    // Last scheduled delivery per ordered node pair, for FIFO links.
    fifo: HashMap<(NodeId, NodeId), SimTime>,
    rng: ChaCha8Rng,
    trace: Vec<TraceEvent>,
    violations: Vec<String>,
}

impl<M: MessageKind> Kernel<M> {
    pub fn new(seed: u64, net: NetConfig) -> Self {
        Kernel {
            now: SimTime::ZERO,
            next_seq: 0,
            trace_seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            links: Links::new(net),
            fifo: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn add_node(&mut self, id: impl Into<NodeId>, cluster: Cluster) {
        let id = id.into();
        self.nodes.insert(
            id.clone(),
            NodeProcess {
                id,
                cluster,
                status: NodeStatus::Up,
                incarnation: 0,
                durable: DurableStore::default(),
            },
        );
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn node(&self, id: &str) -> Option<&NodeProcess> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeProcess> {
        self.nodes.values()
    }

    pub fn is_up(&self, id: &str) -> bool {
        self.nodes
            .get(id)
            .is_some_and(|n| n.status == NodeStatus::Up)
    }

    pub fn cluster_of(&self, id: &str) -> Option<Cluster> {
        self.nodes.get(id).map(|n| n.cluster)
    }

    pub fn link(&self, domain: NetDomain) -> &LinkState {
        self.links.get(domain)
    }

    pub fn domain_between(&self, a: &str, b: &str) -> Option<NetDomain> {
        Some(NetDomain::between(self.cluster_of(a)?, self.cluster_of(b)?))
    }

    pub fn durable(&self, id: &str) -> &DurableStore {
        &self.nodes[id].durable
    }

    pub fn durable_mut(&mut self, id: &str) -> &mut DurableStore {
        &mut self.nodes.get_mut(id).expect("unknown node").durable
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn push(&mut self, time: SimTime, event: Pending<M>) -> EventId {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled { time, seq, event });
        seq
    }

    /// Enqueues `msg` for delivery to `target` at `at`. The message is
    /// delivered iff the target is up at that instant.
    pub fn schedule(&mut self, at: SimTime, target: &str, msg: M) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        if !self.nodes.contains_key(target) {
            return Err(SimError::UnknownNode(target.to_string()));
        }
        Ok(self.push(
            at,
            Pending::Message {
                from: None,
                to: target.to_string(),
                msg,
            },
        ))
    }

    /// Self-addressed timer bound to the node's current incarnation.
    pub fn set_timer(&mut self, node: &str, delay: u64, msg: M) -> EventId {
        let incarnation = self.nodes[node].incarnation;
        self.push(
            self.now + delay,
            Pending::Timer {
                node: node.to_string(),
                incarnation,
                msg,
            },
        )
    }

    /// Enqueues an event addressed to no node; the dispatcher decides what it
    /// means.
    pub fn schedule_external(&mut self, at: SimTime, msg: M) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        Ok(self.push(at, Pending::External(msg)))
    }

    pub fn schedule_fault(&mut self, at: SimTime, fault: FaultAction) -> Result<EventId, SimError> {
        if at < self.now {
            return Err(SimError::ScheduleInPast { at, now: self.now });
        }
        Ok(self.push(at, Pending::Fault(fault)))
    }

    /// Sends over the simulated network. Messages on one ordered node pair
    /// are delivered in send order.
    pub fn send(&mut self, from: &str, to: &str, msg: M) {
        if !self.is_up(from) {
            self.violations
                .push(format!("{}: crashed node {from} attempted a send", self.now));
            return;
        }
        let Some(domain) = self.domain_between(from, to) else {
            self.violations
                .push(format!("{}: send to unknown node {to}", self.now));
            return;
        };
        let link = *self.links.get(domain);
        if link.partitioned {
            self.record_drop(from, to, &msg, "partitioned");
            return;
        }
        let key = (from.to_string(), to.to_string());
        let mut at = self.now + link.latency;
        if let Some(last) = self.fifo.get(&key) {
            at = at.max(*last);
        }
        self.fifo.insert(key, at);
        self.push(
            at,
            Pending::Message {
                from: Some(from.to_string()),
                to: to.to_string(),
                msg,
            },
        );
    }

    fn record_drop(&mut self, from: &str, to: &str, msg: &M, reason: &str) {
        let detail = Detail::new()
            .with("from", from)
            .with("to", to)
            .with("msg", msg.kind())
            .with("reason", reason);
        self.emit(None, "drop", detail);
    }

    pub fn set_partition(&mut self, domain: NetDomain, partitioned: bool) {
        let link = self.links.get_mut(domain);
        if link.partitioned == partitioned {
            return;
        }
        link.partitioned = partitioned;
        let kind = if partitioned { "partition" } else { "heal" };
        self.emit(None, kind, Detail::new().with("domain", domain));
    }

    /// Fail-stop crash. Returns false if the node was already down.
    pub fn crash_node(&mut self, id: &str) -> bool {
        match self.nodes.get(id) {
            Some(n) if n.status == NodeStatus::Up => {}
            _ => return false,
        }
        self.emit(Some(id), "crash", Detail::new());
        self.nodes.get_mut(id).unwrap().status = NodeStatus::Crashed;
        true
    }

    /// Returns false if the node was already up.
    pub fn restart_node(&mut self, id: &str) -> bool {
        let Some(n) = self.nodes.get_mut(id) else {
            return false;
        };
        if n.status == NodeStatus::Up {
            return false;
        }
        n.status = NodeStatus::Up;
        n.incarnation += 1;
        let inc = n.incarnation;
        self.emit(Some(id), "restart", Detail::new().with("incarnation", inc));
        true
    }

    /// Appends a trace event attributed to `node`. Events for crashed nodes
    /// are refused and recorded as violations.
    pub fn emit(&mut self, node: Option<&str>, kind: &str, detail: Detail) {
        if let Some(n) = node {
            if !self.is_up(n) {
                self.violations
                    .push(format!("{}: event `{kind}` attributed to crashed node {n}", self.now));
                return;
            }
        }
        let seq = self.trace_seq;
        self.trace_seq += 1;
        self.trace.push(TraceEvent {
            time: self.now,
            seq,
            kind: kind.to_string(),
            node: node.map(str::to_string),
            detail,
        });
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Processes every event with time <= `until` and returns the trace
    /// events produced along the way.
    pub fn run_until<F>(&mut self, until: SimTime, mut dispatch: F) -> Result<&[TraceEvent], SimError>
    where
        F: FnMut(&mut Kernel<M>, Dispatch<M>),
    {
        if until < self.now {
            return Err(SimError::ScheduleInPast { at: until, now: self.now });
        }
        let mark = self.trace.len();
        while let Some(top) = self.queue.peek() {
            if top.time > until {
                break;
            }
            let Scheduled { time, event, .. } = self.queue.pop().unwrap();
            debug_assert!(time >= self.now);
            self.now = time;
            if let Some(d) = self.resolve(event) {
                dispatch(self, d);
            }
        }
        self.now = until;
        Ok(&self.trace[mark..])
    }

    fn resolve(&mut self, event: Pending<M>) -> Option<Dispatch<M>> {
        match event {
            Pending::Message { from, to, msg } => {
                if !self.is_up(&to) {
                    let src = from.as_deref().unwrap_or("-").to_string();
                    self.record_drop(&src, &to, &msg, "target_down");
                    return None;
                }
                if let Some(src) = &from {
                    let domain = self.domain_between(src, &to)?;
                    if self.links.get(domain).partitioned {
                        self.record_drop(src, &to, &msg, "partitioned");
                        return None;
                    }
                    let detail = Detail::new()
                        .with("from", src)
                        .with("domain", domain)
                        .with("msg", msg.kind());
                    self.emit(Some(&to), "deliver", detail);
                }
                Some(Dispatch::Message { from, to, msg })
            }
            Pending::Timer {
                node,
                incarnation,
                msg,
            } => {
                let n = self.nodes.get(&node)?;
                (n.status == NodeStatus::Up && n.incarnation == incarnation)
                    .then_some(Dispatch::Timer { node, msg })
            }
            Pending::Fault(f) => match f {
                FaultAction::Crash(n) => self.crash_node(&n).then_some(Dispatch::Crashed(n)),
                FaultAction::Restart(n) => {
                    self.restart_node(&n).then_some(Dispatch::Restarted(n))
                }
                FaultAction::Partition(d) => {
                    self.set_partition(d, true);
                    Some(Dispatch::Partition {
                        domain: d,
                        partitioned: true,
                    })
                }
                FaultAction::Heal(d) => {
                    self.set_partition(d, false);
                    Some(Dispatch::Partition {
                        domain: d,
                        partitioned: false,
                    })
                }
            },
            Pending::External(msg) => Some(Dispatch::External(msg)),
        }
    }
}

/// Handle a component uses while handling one event on one node.
pub struct Ctx<'a, M> {
    pub kernel: &'a mut Kernel<M>,
    pub node: &'a str,
}

impl<'a, M: MessageKind> Ctx<'a, M> {
    pub fn new(kernel: &'a mut Kernel<M>, node: &'a str) -> Self {
        Ctx { kernel, node }
    }

    pub fn now(&self) -> SimTime {
        self.kernel.now()
    }

    pub fn send(&mut self, to: &str, msg: M) {
        self.kernel.send(self.node, to, msg);
    }

    pub fn timer(&mut self, delay: u64, msg: M) {
        self.kernel.set_timer(self.node, delay, msg);
    }

    pub fn store(&mut self) -> &mut DurableStore {
        self.kernel.durable_mut(self.node)
    }

    pub fn emit(&mut self, kind: &str, detail: Detail) {
        self.kernel.emit(Some(self.node), kind, detail);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.kernel.rng()
    }

    pub fn reborrow(&mut self) -> Ctx<'_, M> {
        Ctx {
            kernel: self.kernel,
            node: self.node,
        }
    }
}
