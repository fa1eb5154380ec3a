use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Seen `(producer_id, producer_seq)` pairs, compressed as a contiguous
/// prefix per producer plus the sparse seqs above it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupState {
    producers: BTreeMap<String, ProducerWindow>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ProducerWindow {
    /// Every seq below this has been seen.
    next: u64,
    above: BTreeSet<u64>,
}

impl DedupState {
    pub fn contains(&self, producer: &str, seq: u64) -> bool {
        self.producers
            .get(producer)
            .is_some_and(|w| seq < w.next || w.above.contains(&seq))
    }

    /// Marks a pair as seen. Returns false if it was already seen.
    pub fn insert(&mut self, producer: &str, seq: u64) -> bool {
        let w = self.producers.entry(producer.to_string()).or_default();
        if seq < w.next || !w.above.insert(seq) {
            return false;
        }
        while w.above.remove(&w.next) {
            w.next += 1;
        }
        true
    }

    /// Highest contiguously seen seq for a producer.
    pub fn contiguous(&self, producer: &str) -> Option<u64> {
        self.producers
            .get(producer)
            .and_then(|w| w.next.checked_sub(1))
    }

    pub fn sparse_len(&self) -> usize {
        self.producers.values().map(|w| w.above.len()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).unwrap()
    }

    pub fn decode(bytes: &[u8]) -> DedupState {
        if bytes.is_empty() {
            return DedupState::default();
        }
        serde_json::from_slice(bytes).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn out_of_order_arrivals_compact() {
        let mut d = DedupState::default();
        assert!(d.insert("p", 1));
        assert_eq!(d.contiguous("p"), None);
        assert!(d.insert("p", 0));
        assert_eq!(d.contiguous("p"), Some(1));
        assert_eq!(d.sparse_len(), 0);
        assert!(!d.insert("p", 0));
        assert!(!d.insert("p", 1));
    }

    #[test]
    fn encode_round_trip() {
        let mut d = DedupState::default();
        d.insert("a", 0);
        d.insert("a", 5);
        d.insert("b", 2);
        assert_eq!(DedupState::decode(&d.encode()), d);
        assert_eq!(DedupState::decode(&[]), DedupState::default());
    }

    proptest! {
        // Matches a plain set on any insertion order.
        #[test]
        fn behaves_like_a_set(ops in prop::collection::vec((0..3u8, 0..40u64), 0..200)) {
            let mut d = DedupState::default();
            let mut oracle = BTreeSet::new();
            for (p, s) in ops {
                let p = format!("p{p}");
                let fresh = oracle.insert((p.clone(), s));
                prop_assert_eq!(d.insert(&p, s), fresh);
            }
            for p in 0..3u8 {
                let p = format!("p{p}");
                for s in 0..40 {
                    prop_assert_eq!(d.contains(&p, s), oracle.contains(&(p.clone(), s)));
                }
            }
        }
    }
}
