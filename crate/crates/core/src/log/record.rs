use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

/// Position of a record within one topic.
pub type Offset = u64;

/// Name of a replicated topic, e.g. `ET-1` or `CT-2`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicId(pub String);

impl TopicId {
    pub fn new(s: impl Into<String>) -> Self {
        TopicId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TopicId {
    fn from(s: &str) -> Self {
        TopicId(s.to_string())
    }
}

/// Immutable unit of data. `(producer_id, producer_seq)` is its identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub producer_id: String,
    pub producer_seq: u64,
    pub payload: Vec<u8>,
    pub origin_time: SimTime,
}

impl Record {
    pub fn identity(&self) -> (String, u64) {
        (self.producer_id.clone(), self.producer_seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated entry at byte {0}")]
    Truncated(usize),
    #[error("entry at byte {at} declares length {len} but its fields need {need}")]
    BadLength { at: usize, len: usize, need: usize },
    #[error("producer id at byte {0} is not utf-8")]
    BadProducerId(usize),
}

/// Appends one framed entry:
/// `len(4, BE) | producer_id_len(2) | producer_id | producer_seq(8) | origin_time(8) | payload`
/// where `len` counts every byte after the length field.
pub fn encode_entry(rec: &Record, out: &mut Vec<u8>) {
    let id = rec.producer_id.as_bytes();
    assert!(id.len() <= u16::MAX as usize, "producer id too long");
    let body_len = 2 + id.len() + 8 + 8 + rec.payload.len();
    out.reserve(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.extend_from_slice(&(id.len() as u16).to_be_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&rec.producer_seq.to_be_bytes());
    out.extend_from_slice(&rec.origin_time.0.to_be_bytes());
    out.extend_from_slice(&rec.payload);
}

pub fn encode_segment<'a>(records: impl IntoIterator<Item = &'a Record>) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        encode_entry(r, &mut out);
    }
    out
}

/// Decodes a whole segment. Offsets are implicit by position.
pub fn decode_segment(bytes: &[u8]) -> Result<Vec<Record>, DecodeError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (rec, next) = decode_entry(bytes, pos)?;
        out.push(rec);
        pos = next;
    }
    Ok(out)
}

fn take<const N: usize>(bytes: &[u8], at: usize) -> Result<[u8; N], DecodeError> {
    bytes
        .get(at..at + N)
        .map(|s| s.try_into().unwrap())
        .ok_or(DecodeError::Truncated(at))
}

/// Decodes the entry starting at `at`; returns it with the next entry's start.
pub fn decode_entry(bytes: &[u8], at: usize) -> Result<(Record, usize), DecodeError> {
    let len = u32::from_be_bytes(take::<4>(bytes, at)?) as usize;
    let body = at + 4;
    let end = body + len;
    if end > bytes.len() {
        return Err(DecodeError::Truncated(at));
    }
    let id_len = u16::from_be_bytes(take::<2>(bytes, body)?) as usize;
    let need = 2 + id_len + 16;
    if len < need {
        return Err(DecodeError::BadLength { at, len, need });
    }
    let id_start = body + 2;
    let producer_id = std::str::from_utf8(&bytes[id_start..id_start + id_len])
        .map_err(|_| DecodeError::BadProducerId(at))?
        .to_string();
    let p = id_start + id_len;
    let producer_seq = u64::from_be_bytes(take::<8>(bytes, p)?);
    let origin_time = SimTime(u64::from_be_bytes(take::<8>(bytes, p + 8)?));
    let payload = bytes[p + 16..end].to_vec();
    Ok((
        Record {
            producer_id,
            producer_seq,
            payload,
            origin_time,
        },
        end,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, seq: u64, payload: &[u8]) -> Record {
        Record {
            producer_id: id.into(),
            producer_seq: seq,
            payload: payload.to_vec(),
            origin_time: SimTime(1500),
        }
    }

    #[test]
    fn framing_layout() {
        let mut out = Vec::new();
        encode_entry(&rec("ab", 7, b"xyz"), &mut out);
        let mut expected = vec![0, 0, 0, 23, 0, 2, b'a', b'b'];
        expected.extend_from_slice(&7u64.to_be_bytes());
        expected.extend_from_slice(&1500u64.to_be_bytes());
        expected.extend_from_slice(b"xyz");
        assert_eq!(out, expected);
    }

    #[test]
    fn truncated_segment_is_an_error() {
        let bytes = encode_segment(&[rec("cam-EN-1", 0, b"hello")]);
        let err = decode_segment(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err, DecodeError::Truncated(0));
    }

    #[test]
    fn short_length_field_is_an_error() {
        let mut bytes = encode_segment(&[rec("p", 0, b"")]);
        bytes[3] = 3;
        bytes.truncate(7);
        assert!(matches!(decode_segment(&bytes), Err(DecodeError::BadLength { .. })));
    }

    proptest! {
        #[test]
        fn segment_round_trip(recs in prop::collection::vec(
            ("[a-zA-Z0-9-]{0,12}", any::<u64>(), prop::collection::vec(any::<u8>(), 0..64), any::<u64>()),
            0..20,
        )) {
            let recs: Vec<Record> = recs.into_iter().map(|(id, seq, payload, t)| Record {
                producer_id: id, producer_seq: seq, payload, origin_time: SimTime(t),
            }).collect();
            let bytes = encode_segment(&recs);
            prop_assert_eq!(decode_segment(&bytes).unwrap(), recs);
        }
    }
}
