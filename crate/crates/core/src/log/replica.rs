use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record::{decode_entry, encode_entry, Offset, Record, TopicId};
use crate::sim::DurableStore;

/// Durable position and opaque metadata of one consumer group.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupState {
    pub offset: Offset,
    pub metadata: Vec<u8>,
}

pub(crate) fn segment_key(topic: &TopicId) -> String {
    format!("log/{topic}")
}

fn epochs_key(topic: &TopicId) -> String {
    format!("epochs/{topic}")
}

fn groups_key(topic: &TopicId) -> String {
    format!("groups/{topic}")
}

/// One replica of a topic on one node.
///
/// Records live in the durable segment; the decoded copy and byte index are
/// volatile and rebuilt by [`ReplicaLog::open`]. Leader epochs are tracked as
/// `(epoch, first offset)` pairs so that divergent tails can be detected.
#[derive(Debug, Clone)]
pub struct ReplicaLog {
    topic: TopicId,
    records: Vec<Record>,
    starts: Vec<usize>,
    bytes_len: usize,
    epochs: Vec<(u64, Offset)>,
    groups: BTreeMap<String, GroupState>,
}

impl ReplicaLog {
    pub fn exists(store: &DurableStore, topic: &TopicId) -> bool {
        store.contains(&segment_key(topic))
    }

    /// Creates an empty durable replica, or opens the existing one.
    pub fn create(store: &mut DurableStore, topic: &TopicId) -> ReplicaLog {
        if !Self::exists(store, topic) {
            store.put(segment_key(topic), Vec::new());
        }
        Self::open(store, topic).expect("freshly created segment")
    }

    pub fn open(store: &DurableStore, topic: &TopicId) -> Option<ReplicaLog> {
        let bytes = store.get(&segment_key(topic))?;
        let mut records = Vec::new();
        let mut starts = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            // A torn tail cannot happen under fail-stop crashes; stop at the
            // first undecodable entry regardless.
            let Ok((rec, next)) = decode_entry(bytes, pos) else {
                break;
            };
            starts.push(pos);
            records.push(rec);
            pos = next;
        }
        let epochs = store
            .get(&epochs_key(topic))
            .and_then(|b| serde_json::from_slice(b).ok())
            .unwrap_or_default();
        let groups = store
            .get(&groups_key(topic))
            .and_then(|b| serde_json::from_slice(b).ok())
            .unwrap_or_default();
        Some(ReplicaLog {
            topic: topic.clone(),
            records,
            starts,
            bytes_len: pos,
            epochs,
            groups,
        })
    }

    pub fn topic(&self) -> &TopicId {
        &self.topic
    }

    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Leader epoch that wrote the entry at `offset`.
    pub fn epoch_at(&self, offset: Offset) -> u64 {
        if offset >= self.len() {
            return 0;
        }
        self.epochs
            .iter()
            .rev()
            .find(|(_, start)| *start <= offset)
            .map_or(0, |(e, _)| *e)
    }

    /// Newest leader epoch this replica has entries from or has been marked
    /// with. Used to rank replicas when a new leader is chosen.
    pub fn last_epoch(&self) -> u64 {
        self.epochs.last().map_or(0, |(e, _)| *e)
    }

    /// Records that this replica holds the log of leader `epoch` up to its
    /// current end, even if that leader has written nothing yet.
    pub fn mark_epoch(&mut self, store: &mut DurableStore, epoch: u64) {
        if epoch <= self.last_epoch() {
            return;
        }
        let len = self.len();
        match self.epochs.last_mut() {
            Some(last) if last.1 == len => *last = (epoch, len),
            _ => self.epochs.push((epoch, len)),
        }
        self.persist_epochs(store);
    }

    /// First offset written under the same epoch as `offset`.
    pub fn epoch_start(&self, offset: Offset) -> Offset {
        let e = self.epoch_at(offset);
        self.epochs
            .iter()
            .filter(|(ep, start)| *ep == e && *start <= offset)
            .map(|(_, s)| *s)
            .min()
            .unwrap_or(0)
    }

    fn persist_epochs(&self, store: &mut DurableStore) {
        store.put(
            epochs_key(&self.topic),
            serde_json::to_vec(&self.epochs).unwrap(),
        );
    }

    /// Durably appends records written under `epoch`. Returns the first offset.
    pub fn append(&mut self, store: &mut DurableStore, epoch: u64, recs: &[Record]) -> Offset {
        let first = self.len();
        if recs.is_empty() {
            return first;
        }
        match self.epochs.last_mut() {
            Some((e, _)) if *e == epoch => {}
            // A marker that covers no entry yet is replaced.
            Some(last) if last.1 == first => {
                *last = (epoch, first);
                self.persist_epochs(store);
            }
            _ => {
                self.epochs.push((epoch, first));
                self.persist_epochs(store);
            }
        }
        let mut bytes = Vec::new();
        for r in recs {
            self.starts.push(self.bytes_len + bytes.len());
            encode_entry(r, &mut bytes);
            self.records.push(r.clone());
        }
        self.bytes_len += bytes.len();
        store.append(&segment_key(&self.topic), &bytes);
        first
    }

    /// Drops every entry at or after `len`.
    pub fn truncate(&mut self, store: &mut DurableStore, len: u64) {
        if len >= self.len() {
            return;
        }
        let cut = self.starts[len as usize];
        self.records.truncate(len as usize);
        self.starts.truncate(len as usize);
        self.bytes_len = cut;
        store.truncate(&segment_key(&self.topic), cut);
        let before = self.epochs.len();
        self.epochs.retain(|(_, start)| *start < len);
        if self.epochs.len() != before {
            self.persist_epochs(store);
        }
    }

    /// Records in `[from, min(from + max, limit))`.
    pub fn read(&self, from: Offset, max: usize, limit: u64) -> &[Record] {
        let end = limit.min(self.len()).min(from.saturating_add(max as u64));
        if from >= end {
            return &[];
        }
        &self.records[from as usize..end as usize]
    }

    pub fn group(&self, group: &str) -> GroupState {
        self.groups.get(group).cloned().unwrap_or_default()
    }

    pub fn groups(&self) -> &BTreeMap<String, GroupState> {
        &self.groups
    }

    /// Stores a group position; regressions are refused and reported with
    /// the current position.
    pub fn commit_group(
        &mut self,
        store: &mut DurableStore,
        group: &str,
        state: GroupState,
    ) -> Result<(), Offset> {
        let current = self.groups.get(group).map_or(0, |g| g.offset);
        if state.offset < current {
            return Err(current);
        }
        self.groups.insert(group.to_string(), state);
        store.put(
            groups_key(&self.topic),
            serde_json::to_vec(&self.groups).unwrap(),
        );
        Ok(())
    }

    /// Adopts any group positions ahead of ours. Returns true if anything
    /// changed.
    pub fn merge_groups(
        &mut self,
        store: &mut DurableStore,
        other: &BTreeMap<String, GroupState>,
    ) -> bool {
        let mut changed = false;
        for (g, s) in other {
            let ahead = self.groups.get(g).is_none_or(|cur| s.offset > cur.offset);
            if ahead {
                self.groups.insert(g.clone(), s.clone());
                changed = true;
            }
        }
        if changed {
            store.put(
                groups_key(&self.topic),
                serde_json::to_vec(&self.groups).unwrap(),
            );
        }
        changed
    }
}
