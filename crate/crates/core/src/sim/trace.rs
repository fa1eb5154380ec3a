//! Line-oriented trace records.
//!
//! Each event renders as
//! `time=<int> seq=<int> kind=<word> node=<id> detail=<key:value,...>`
//! with a fixed field order so that traces can be compared byte for byte.

use std::fmt;
use std::fmt::Write as _;

use super::SimTime;
use crate::error::ParseError;

/// Ordered key/value pairs attached to a trace event.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Detail(Vec<(String, String)>);

impl Detail {
    pub fn new() -> Self {
        Detail(Vec::new())
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        let mut v = String::new();
        let _ = write!(v, "{value}");
        self.0.push((sanitize(key), sanitize(&v)));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            ',' | ':' | '=' | ' ' | '\n' | '\t' => '_',
            c => c,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub time: SimTime,
    pub seq: u64,
    pub kind: String,
    /// `None` for events the kernel itself records (drops, partitions).
    pub node: Option<String>,
    pub detail: Detail,
}

impl TraceEvent {
    pub fn node_is(&self, id: &str) -> bool {
        self.node.as_deref() == Some(id)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.detail.get(key)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.detail.get_u64(key)
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<TraceEvent, ParseError> {
        let err = |msg: String| ParseError::new(line_no, msg);
        let mut parts = line.splitn(5, ' ');
        let mut field = |name: &str| -> Result<&str, ParseError> {
            let part = parts
                .next()
                .ok_or_else(|| err(format!("missing field `{name}`")))?;
            part.strip_prefix(name)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| err(format!("expected `{name}=`, found `{part}`")))
        };
        let time = field("time")?
            .parse()
            .map_err(|_| err("bad time".into()))?;
        let seq = field("seq")?.parse().map_err(|_| err("bad seq".into()))?;
        let kind = field("kind")?.to_string();
        let node = match field("node")? {
            "-" => None,
            n => Some(n.to_string()),
        };
        let raw = field("detail")?;
        let mut detail = Detail::new();
        if !raw.is_empty() {
            for pair in raw.split(',') {
                let (k, v) = pair
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad detail pair `{pair}`")))?;
                detail.0.push((k.to_string(), v.to_string()));
            }
        }
        Ok(TraceEvent {
            time: SimTime(time),
            seq,
            kind,
            node,
            detail,
        })
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "time={} seq={} kind={} node={} detail=",
            self.time,
            self.seq,
            self.kind,
            self.node.as_deref().unwrap_or("-")
        )?;
        for (i, (k, v)) in self.detail.0.iter().enumerate() {
            if i > 0 {
                f.write_char(',')?;
            }
            write!(f, "{k}:{v}")?;
        }
        Ok(())
    }
}

/// Renders events one per line, newline terminated.
pub fn render(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 80);
    for e in events {
        let _ = writeln!(out, "{e}");
    }
    out
}

/// Parses a whole trace file, rejecting out-of-order events.
pub fn parse(text: &str) -> Result<Vec<TraceEvent>, ParseError> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev = TraceEvent::parse_line(line, i + 1)?;
        if let Some(prev) = events.last() {
            if (ev.time, ev.seq) <= (prev.time, prev.seq) {
                return Err(ParseError::new(i + 1, "events out of (time, seq) order"));
            }
        }
        events.push(ev);
    }
    Ok(events)
}
