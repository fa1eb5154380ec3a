//! Registry of named, deterministic record transforms.

use chrono::DateTime;

use crate::log::Record;
use crate::sim::SimTime;

pub type TransformFn = fn(&Record) -> Option<Record>;

const REGISTRY: &[(&str, TransformFn)] = &[
    ("identity", identity),
    ("annotate", annotate_record),
    ("filter_even_seq", filter_even_seq),
];

pub fn lookup(name: &str) -> Option<TransformFn> {
    REGISTRY.iter().find(|(n, _)| *n == name).map(|(_, f)| *f)
}

pub fn is_registered(name: &str) -> bool {
    lookup(name).is_some()
}

pub fn names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|(n, _)| *n)
}

fn identity(r: &Record) -> Option<Record> {
    Some(r.clone())
}

fn filter_even_seq(r: &Record) -> Option<Record> {
    r.producer_seq.is_multiple_of(2).then(|| r.clone())
}

/// Stamps camera id, capture date and capture time onto the payload. The
/// capture time is the record's origin time, so the result does not depend on
/// where or when the stage runs. Already annotated payloads pass through.
fn annotate_record(r: &Record) -> Option<Record> {
    if AnnotatedPayload::decode(&r.payload).is_some() {
        return Some(r.clone());
    }
    let ann = annotate(&r.payload, &r.producer_id, r.origin_time);
    Some(Record {
        payload: ann.encode(),
        ..r.clone()
    })
}

const MAGIC: &[u8; 4] = b"ANN1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedPayload {
    pub camera_id: String,
    /// `YYYY-MM-DD`, virtual time zero being 1970-01-01.
    pub date: String,
    pub timestamp: SimTime,
    pub body: Vec<u8>,
}

pub fn annotate(payload: &[u8], camera_id: &str, now: SimTime) -> AnnotatedPayload {
    let date = DateTime::from_timestamp_millis(now.0 as i64)
        .map(|d| d.date_naive().format("%Y-%m-%d").to_string())
        .unwrap_or_default();
    AnnotatedPayload {
        camera_id: camera_id.to_string(),
        date,
        timestamp: now,
        body: payload.to_vec(),
    }
}

impl AnnotatedPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.body.len() + 32);
        out.extend_from_slice(MAGIC);
        for s in [&self.camera_id, &self.date] {
            out.extend_from_slice(&(s.len() as u16).to_be_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out.extend_from_slice(&self.timestamp.0.to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<AnnotatedPayload> {
        let mut rest = bytes.strip_prefix(MAGIC)?;
        let mut string = || -> Option<String> {
            let n = u16::from_be_bytes(rest.get(..2)?.try_into().ok()?) as usize;
            let s = std::str::from_utf8(rest.get(2..2 + n)?).ok()?.to_string();
            rest = &rest[2 + n..];
            Some(s)
        };
        let camera_id = string()?;
        let date = string()?;
        let timestamp = SimTime(u64::from_be_bytes(rest.get(..8)?.try_into().ok()?));
        Some(AnnotatedPayload {
            camera_id,
            date,
            timestamp,
            body: rest[8..].to_vec(),
        })
    }
}
