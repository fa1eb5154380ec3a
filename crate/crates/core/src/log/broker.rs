use std::collections::{BTreeMap, BTreeSet};

use super::{
    majority, GroupState, LogError, LogMsg, Offset, Record, ReplicaLog, ReplicaSet,
    ReplicateResult, ReqId, TopicAssignment, TopicId,
};
use crate::msg::{Msg, Timer};
use crate::sim::{Ctx, Detail, NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BrokerParams {
    /// Followers silent for longer than this leave the in-sync set and stop
    /// counting toward the replicas a write can reach.
    pub suspect_timeout: u64,
    pub replication_interval: u64,
    pub max_entries_per_replicate: usize,
}

impl Default for BrokerParams {
    fn default() -> Self {
        BrokerParams {
            suspect_timeout: 500,
            replication_interval: 50,
            max_entries_per_replicate: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct Progress {
    next: u64,
    matched: u64,
    last_contact: SimTime,
}

#[derive(Debug, Clone)]
struct PendingProduce {
    client: NodeId,
    req: ReqId,
    first: Offset,
    end: u64,
    stage: String,
}

#[derive(Debug, Clone, Default)]
struct LeaderState {
    /// Log length when leadership began. Followers caught up to here carry
    /// this leader's epoch mark, so anything they hold may be committed.
    start: u64,
    followers: BTreeMap<NodeId, Progress>,
    in_sync: BTreeSet<NodeId>,
    pending: Vec<PendingProduce>,
}

#[derive(Debug)]
struct Replica {
    log: ReplicaLog,
    /// Highest leader epoch seen for this topic.
    epoch: u64,
    leader: Option<NodeId>,
    commit_len: u64,
    assignment: TopicAssignment,
    lead: Option<LeaderState>,
}

/// Broker role of one node: hosts topic replicas and serves the log protocol.
#[derive(Debug)]
pub struct Broker {
    node: NodeId,
    params: BrokerParams,
    replicas: BTreeMap<TopicId, Replica>,
    /// Every topic of this node's cluster, for redirect hints.
    assignments: BTreeMap<TopicId, TopicAssignment>,
}

impl Broker {
    /// A broker comes up with no active replicas; they are reopened from the
    /// durable store once the node learns the current configuration.
    pub fn new(node: impl Into<NodeId>, params: BrokerParams) -> Self {
        Broker {
            node: node.into(),
            params,
            replicas: BTreeMap::new(),
            assignments: BTreeMap::new(),
        }
    }

    pub fn start(&self, ctx: &mut Ctx<'_, Msg>) {
        ctx.timer(self.params.replication_interval, Msg::Timer(Timer::Replication));
    }

    pub fn log(&self, topic: &TopicId) -> Option<&ReplicaLog> {
        self.replicas.get(topic).map(|r| &r.log)
    }

    pub fn commit_len(&self, topic: &TopicId) -> Option<u64> {
        self.replicas.get(topic).map(|r| r.commit_len)
    }

    pub fn is_leader(&self, topic: &TopicId) -> bool {
        self.replicas.get(topic).is_some_and(|r| r.lead.is_some())
    }

    pub fn hosted(&self) -> impl Iterator<Item = &TopicId> {
        self.replicas.keys()
    }

    pub fn replica_set(&self, topic: &TopicId) -> Option<ReplicaSet> {
        let r = self.replicas.get(topic)?;
        let lead = r.lead.as_ref()?;
        let mut in_sync = lead.in_sync.clone();
        in_sync.insert(self.node.clone());
        Some(ReplicaSet {
            leader: self.node.clone(),
            followers: lead.followers.keys().cloned().collect(),
            in_sync,
            commit_index: r.commit_len.checked_sub(1),
        })
    }

    fn hint(&self, topic: &TopicId) -> Option<NodeId> {
        self.assignments.get(topic).and_then(|a| a.leader.clone())
    }

    /// Reconciles hosted replicas with the committed topic assignments.
    pub fn apply_assignments(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        topics: &BTreeMap<TopicId, TopicAssignment>,
    ) {
        self.assignments = topics.clone();
        let mine: Vec<_> = topics
            .iter()
            .filter(|(_, a)| a.replicas.contains(&self.node))
            .map(|(t, a)| (t.clone(), a.clone()))
            .collect();
        let keep: BTreeSet<_> = mine.iter().map(|(t, _)| t.clone()).collect();
        let dropped: Vec<_> = self
            .replicas
            .keys()
            .filter(|t| !keep.contains(*t))
            .cloned()
            .collect();
        for t in dropped {
            self.replicas.remove(&t);
            ctx.emit("replica_stop", Detail::new().with("topic", &t));
        }
        for (topic, a) in mine {
            if !self.replicas.contains_key(&topic) {
                let existed = ReplicaLog::exists(ctx.kernel.durable(ctx.node), &topic);
                let log = ReplicaLog::create(ctx.store(), &topic);
                let kind = if existed { "replica_open" } else { "replica_create" };
                ctx.emit(
                    kind,
                    Detail::new().with("topic", &topic).with("len", log.len()),
                );
                self.replicas.insert(
                    topic.clone(),
                    Replica {
                        log,
                        epoch: 0,
                        leader: None,
                        commit_len: 0,
                        assignment: a.clone(),
                        lead: None,
                    },
                );
            }
            let me = self.node.clone();
            let r = self.replicas.get_mut(&topic).unwrap();
            r.assignment = a.clone();
            if a.leader.as_ref() == Some(&me) {
                if r.lead.is_none() || a.leader_epoch > r.epoch {
                    self.become_leader(ctx, &topic, a.leader_epoch);
                } else {
                    self.sync_followers(ctx.now(), &topic);
                }
            } else {
                if r.lead.take().is_some() {
                    ctx.emit(
                        "leader_resign",
                        Detail::new().with("topic", &topic).with("epoch", r.epoch),
                    );
                }
                r.leader = a.leader.clone();
                r.epoch = r.epoch.max(a.leader_epoch);
            }
        }
    }

    fn become_leader(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId, epoch: u64) {
        let r = self.replicas.get_mut(topic).unwrap();
        r.epoch = r.epoch.max(epoch);
        r.leader = Some(self.node.clone());
        r.log.mark_epoch(ctx.kernel.durable_mut(ctx.node), r.epoch);
        r.lead = Some(LeaderState {
            start: r.log.len(),
            ..LeaderState::default()
        });
        ctx.emit(
            "leader_start",
            Detail::new()
                .with("topic", topic)
                .with("epoch", r.epoch)
                .with("len", r.log.len())
                .with("commit", r.commit_len),
        );
        self.sync_followers(ctx.now(), topic);
        self.replicate_all(ctx, topic);
    }

    fn sync_followers(&mut self, now: SimTime, topic: &TopicId) {
        let me = self.node.clone();
        let r = self.replicas.get_mut(topic).unwrap();
        let len = r.log.len();
        let Some(lead) = r.lead.as_mut() else { return };
        let wanted: BTreeSet<_> = r
            .assignment
            .replicas
            .iter()
            .filter(|n| **n != me)
            .cloned()
            .collect();
        lead.followers.retain(|n, _| wanted.contains(n));
        lead.in_sync.retain(|n| wanted.contains(n));
        for n in wanted {
            lead.followers.entry(n).or_insert(Progress {
                next: len,
                matched: 0,
                last_contact: now,
            });
        }
    }

    pub fn on_replication_tick(&mut self, ctx: &mut Ctx<'_, Msg>) {
        let led: Vec<_> = self
            .replicas
            .iter()
            .filter(|(_, r)| r.lead.is_some())
            .map(|(t, _)| t.clone())
            .collect();
        for topic in led {
            self.expire_in_sync(ctx, &topic);
            // Retransmit from the last acknowledged position.
            if let Some(lead) = self.replicas.get_mut(&topic).unwrap().lead.as_mut() {
                for p in lead.followers.values_mut() {
                    p.next = p.matched;
                }
            }
            self.replicate_all(ctx, &topic);
        }
        ctx.timer(self.params.replication_interval, Msg::Timer(Timer::Replication));
    }

    fn expire_in_sync(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId) {
        let now = ctx.now();
        let timeout = self.params.suspect_timeout;
        let r = self.replicas.get_mut(topic).unwrap();
        let Some(lead) = r.lead.as_mut() else { return };
        let stale: Vec<_> = lead
            .in_sync
            .iter()
            .filter(|n| {
                lead.followers
                    .get(*n)
                    .is_none_or(|p| now.saturating_sub(p.last_contact) > timeout)
            })
            .cloned()
            .collect();
        for n in stale {
            lead.in_sync.remove(&n);
            ctx.emit(
                "isr_leave",
                Detail::new().with("topic", topic).with("replica", &n),
            );
        }
    }

    fn replicate_all(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId) {
        let followers: Vec<_> = match self.replicas.get(topic).and_then(|r| r.lead.as_ref()) {
            Some(l) => l.followers.keys().cloned().collect(),
            None => return,
        };
        for f in followers {
            self.replicate_to(ctx, topic, &f);
        }
    }

    fn replicate_to(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId, follower: &str) {
        let max = self.params.max_entries_per_replicate;
        let r = self.replicas.get_mut(topic).unwrap();
        let Some(lead) = r.lead.as_mut() else { return };
        let Some(p) = lead.followers.get_mut(follower) else {
            return;
        };
        let from = p.next.min(r.log.len());
        let entries: Vec<(u64, Record)> = r
            .log
            .read(from, max, u64::MAX)
            .iter()
            .enumerate()
            .map(|(i, rec)| (r.log.epoch_at(from + i as u64), rec.clone()))
            .collect();
        p.next = from + entries.len() as u64;
        let prev_epoch = match from {
            0 => 0,
            n => r.log.epoch_at(n - 1),
        };
        let msg = LogMsg::Replicate {
            topic: topic.clone(),
            epoch: r.epoch,
            prev_len: from,
            prev_epoch,
            entries,
            leader_start: lead.start,
            commit_len: r.commit_len,
            groups: r.log.groups().clone(),
        };
        ctx.send(follower, Msg::Log(msg));
    }

    pub fn on_message(&mut self, ctx: &mut Ctx<'_, Msg>, from: &str, msg: LogMsg) {
        match msg {
            LogMsg::Produce {
                req,
                topic,
                records,
                stage,
            } => self.on_produce(ctx, from, req, topic, records, stage),
            LogMsg::Replicate {
                topic,
                epoch,
                prev_len,
                prev_epoch,
                entries,
                leader_start,
                commit_len,
                groups,
            } => {
                let result = self.on_replicate(
                    ctx,
                    from,
                    &topic,
                    (epoch, prev_len, prev_epoch, leader_start),
                    entries,
                    commit_len,
                    &groups,
                );
                if let Some(result) = result {
                    let epoch = self.replicas.get(&topic).map_or(epoch, |r| r.epoch);
                    ctx.send(
                        from,
                        Msg::Log(LogMsg::ReplicateReply {
                            topic,
                            epoch,
                            result,
                        }),
                    );
                }
            }
            LogMsg::ReplicateReply {
                topic,
                epoch,
                result,
            } => self.on_replicate_reply(ctx, from, &topic, epoch, result),
            LogMsg::Fetch {
                req,
                topic,
                from: offset,
                max,
            } => {
                let result = match self.replicas.get(&topic) {
                    Some(r) => Ok(r.log.read(offset, max, r.commit_len).to_vec()),
                    None => Err(LogError::NotLeader {
                        hint: self.hint(&topic),
                    }),
                };
                ctx.send(
                    from,
                    Msg::Log(LogMsg::FetchReply {
                        req,
                        topic,
                        from: offset,
                        result,
                    }),
                );
            }
            LogMsg::CommitOffset {
                req,
                topic,
                group,
                state,
            } => {
                let result = self.on_commit_offset(ctx, &topic, &group, state);
                ctx.send(
                    from,
                    Msg::Log(LogMsg::CommitOffsetReply { req, topic, result }),
                );
            }
            LogMsg::FetchCommitted { req, topic, group } => {
                let result = match self.replicas.get(&topic) {
                    Some(r) if r.lead.is_some() => Ok(r.log.group(&group)),
                    _ => Err(LogError::NotLeader {
                        hint: self.hint(&topic),
                    }),
                };
                ctx.send(
                    from,
                    Msg::Log(LogMsg::FetchCommittedReply { req, topic, result }),
                );
            }
            LogMsg::StateQuery { topic, nonce } => {
                let state = match self.replicas.get(&topic) {
                    Some(r) => Some((r.log.last_epoch(), r.log.len())),
                    None => ReplicaLog::open(ctx.kernel.durable(ctx.node), &topic)
                        .map(|l| (l.last_epoch(), l.len())),
                };
                if let Some((last_epoch, len)) = state {
                    ctx.send(
                        from,
                        Msg::Log(LogMsg::StateReply {
                            topic,
                            nonce,
                            last_epoch,
                            len,
                        }),
                    );
                }
            }
            // Replies are consumed by clients and the manager, not the broker.
            LogMsg::ProduceReply { .. }
            | LogMsg::FetchReply { .. }
            | LogMsg::CommitOffsetReply { .. }
            | LogMsg::FetchCommittedReply { .. }
            | LogMsg::StateReply { .. } => {}
        }
    }

    fn reachable_replicas(&self, r: &Replica, now: SimTime) -> usize {
        let lead = r.lead.as_ref().unwrap();
        1 + lead
            .followers
            .values()
            .filter(|p| now.saturating_sub(p.last_contact) <= self.params.suspect_timeout)
            .count()
    }

    fn on_produce(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        client: &str,
        req: ReqId,
        topic: TopicId,
        records: Vec<Record>,
        stage: String,
    ) {
        let reply = |ctx: &mut Ctx<'_, Msg>, topic: TopicId, result| {
            ctx.send(client, Msg::Log(LogMsg::ProduceReply { req, topic, result }));
        };
        let Some(r) = self.replicas.get(&topic).filter(|r| r.lead.is_some()) else {
            let hint = self.hint(&topic);
            reply(ctx, topic, Err(LogError::NotLeader { hint }));
            return;
        };
        let needed = r.assignment.majority();
        if self.reachable_replicas(r, ctx.now()) < needed {
            ctx.emit(
                "append_refused",
                Detail::new()
                    .with("topic", &topic)
                    .with("stage", &stage)
                    .with("reason", "not_enough_replicas"),
            );
            reply(ctx, topic, Err(LogError::NotEnoughReplicas));
            return;
        }
        let r = self.replicas.get_mut(&topic).unwrap();
        let first = r.log.append(ctx.kernel.durable_mut(ctx.node), r.epoch, &records);
        let end = r.log.len();
        ctx.emit(
            "log_write",
            Detail::new()
                .with("topic", &topic)
                .with("from", first)
                .with("count", records.len())
                .with("epoch", r.epoch),
        );
        ctx.emit(
            "append",
            Detail::new()
                .with("topic", &topic)
                .with("stage", &stage)
                .with("from", first)
                .with("count", records.len()),
        );
        r.lead.as_mut().unwrap().pending.push(PendingProduce {
            client: client.to_string(),
            req,
            first,
            end,
            stage,
        });
        self.advance_commit(ctx, &topic);
        self.replicate_all(ctx, &topic);
    }

    #[allow(clippy::too_many_arguments)]
    fn on_replicate(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        leader: &str,
        topic: &TopicId,
        (epoch, prev_len, prev_epoch, leader_start): (u64, u64, u64, u64),
        entries: Vec<(u64, Record)>,
        leader_commit: u64,
        groups: &BTreeMap<String, GroupState>,
    ) -> Option<ReplicateResult> {
        let r = self.replicas.get_mut(topic)?;
        if epoch < r.epoch {
            return Some(ReplicateResult::Stale { epoch: r.epoch });
        }
        if r.lead.is_some() && epoch == r.epoch {
            // Two leaders in one epoch cannot happen; ignore rather than fork.
            return None;
        }
        if r.lead.take().is_some() {
            ctx.emit(
                "leader_resign",
                Detail::new().with("topic", topic).with("epoch", r.epoch),
            );
        }
        r.epoch = epoch;
        r.leader = Some(leader.to_string());
        let store = ctx.kernel.durable_mut(ctx.node);
        if prev_len > r.log.len() {
            return Some(ReplicateResult::Mismatch { hint: r.log.len() });
        }
        if prev_len > 0 && r.log.epoch_at(prev_len - 1) != prev_epoch {
            let hint = r.log.epoch_start(prev_len - 1).min(prev_len - 1);
            return Some(ReplicateResult::Mismatch { hint });
        }
        let mut write_from = None;
        let mut offset = prev_len;
        let mut fresh = Vec::new();
        let mut fresh_epoch = None;
        for (e, rec) in entries {
            if write_from.is_none() && offset < r.log.len() {
                if r.log.epoch_at(offset) == e {
                    offset += 1;
                    continue;
                }
                r.log.truncate(store, offset);
            }
            write_from.get_or_insert(offset);
            // Entries of one epoch are written in one durable append.
            if fresh_epoch.is_some_and(|fe| fe != e) {
                r.log.append(store, fresh_epoch.unwrap(), &fresh);
                fresh.clear();
            }
            fresh_epoch = Some(e);
            fresh.push(rec);
            offset += 1;
        }
        if let Some(e) = fresh_epoch {
            r.log.append(store, e, &fresh);
        }
        if offset >= leader_start {
            // Everything this leader holds from its start on carries its epoch,
            // so an older tail past the matched point is divergent.
            let cut = (offset..r.log.len()).find(|&k| r.log.epoch_at(k) != epoch);
            if let Some(cut) = cut {
                r.log.truncate(store, cut);
            }
            r.log.mark_epoch(store, epoch);
        }
        r.log.merge_groups(store, groups);
        if let Some(from) = write_from {
            ctx.emit(
                "log_write",
                Detail::new()
                    .with("topic", topic)
                    .with("from", from)
                    .with("count", offset - from)
                    .with("epoch", epoch),
            );
        }
        let matched = offset;
        let r = self.replicas.get_mut(topic).unwrap();
        r.commit_len = r.commit_len.max(leader_commit.min(matched));
        Some(ReplicateResult::Ack { matched })
    }

    fn on_replicate_reply(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        follower: &str,
        topic: &TopicId,
        epoch: u64,
        result: ReplicateResult,
    ) {
        let now = ctx.now();
        let Some(r) = self.replicas.get_mut(topic) else {
            return;
        };
        if epoch > r.epoch {
            return;
        }
        let len = r.log.len();
        let Some(lead) = r.lead.as_mut() else { return };
        let Some(p) = lead.followers.get_mut(follower) else {
            return;
        };
        p.last_contact = now;
        match result {
            ReplicateResult::Ack { matched } => {
                p.matched = p.matched.max(matched);
                p.next = p.next.max(p.matched);
                let more = p.matched < len && p.next <= p.matched;
                self.advance_commit(ctx, topic);
                if more {
                    self.replicate_to(ctx, topic, follower);
                }
            }
            ReplicateResult::Mismatch { hint } => {
                p.next = hint;
                p.matched = p.matched.min(hint);
                self.replicate_to(ctx, topic, follower);
            }
            ReplicateResult::Stale { .. } => {}
        }
    }

    fn advance_commit(&mut self, ctx: &mut Ctx<'_, Msg>, topic: &TopicId) {
        let r = self.replicas.get_mut(topic).unwrap();
        let Some(lead) = r.lead.as_mut() else { return };
        let mut matched: Vec<u64> = lead.followers.values().map(|p| p.matched).collect();
        matched.push(r.log.len());
        // Missing replicas (a short replica set) count as holding nothing.
        let total = r.assignment.replicas.len().max(r.assignment.rf);
        matched.resize(total.max(matched.len()), 0);
        matched.sort_unstable_by(|a, b| b.cmp(a));
        let candidate = matched[majority(total) - 1];
        // A majority past the start carries this leader's mark, so no replica
        // lacking these entries can be chosen as a later leader.
        if candidate > r.commit_len && candidate >= lead.start {
            r.commit_len = candidate;
            ctx.emit(
                "commit",
                Detail::new().with("topic", topic).with("len", candidate),
            );
        }
        let commit = r.commit_len;
        let now = ctx.now();
        let timeout = self.params.suspect_timeout;
        let joins: Vec<_> = lead
            .followers
            .iter()
            .filter(|(n, p)| {
                p.matched >= commit
                    && now.saturating_sub(p.last_contact) <= timeout
                    && !lead.in_sync.contains(*n)
            })
            .map(|(n, _)| n.clone())
            .collect();
        for n in joins {
            lead.in_sync.insert(n.clone());
            ctx.emit(
                "isr_join",
                Detail::new()
                    .with("topic", topic)
                    .with("replica", &n)
                    .with("len", commit),
            );
        }
        let (done, waiting): (Vec<_>, Vec<_>) =
            lead.pending.drain(..).partition(|p| p.end <= commit);
        lead.pending = waiting;
        for p in done {
            for off in p.first..p.end {
                let rec = &r.log.records()[off as usize];
                ctx.emit(
                    "ack",
                    Detail::new()
                        .with("topic", topic)
                        .with("offset", off)
                        .with("producer", &rec.producer_id)
                        .with("seq", rec.producer_seq)
                        .with("stage", &p.stage),
                );
            }
            ctx.send(
                &p.client,
                Msg::Log(LogMsg::ProduceReply {
                    req: p.req,
                    topic: topic.clone(),
                    result: Ok(p.first),
                }),
            );
        }
    }

    fn on_commit_offset(
        &mut self,
        ctx: &mut Ctx<'_, Msg>,
        topic: &TopicId,
        group: &str,
        state: GroupState,
    ) -> Result<(), LogError> {
        let hint = self.hint(topic);
        let Some(r) = self.replicas.get_mut(topic).filter(|r| r.lead.is_some()) else {
            return Err(LogError::NotLeader { hint });
        };
        if state.offset > r.commit_len {
            // Cannot commit past what the topic has committed.
            return Err(LogError::OffsetRegression {
                current: r.log.group(group).offset,
            });
        }
        let offset = state.offset;
        r.log
            .commit_group(ctx.kernel.durable_mut(ctx.node), group, state)
            .map_err(|current| LogError::OffsetRegression { current })?;
        ctx.emit(
            "offset_commit",
            Detail::new()
                .with("topic", topic)
                .with("group", group)
                .with("offset", offset),
        );
        Ok(())
    }
}
