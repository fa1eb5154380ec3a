//! Post-hoc property checks over a trace and the final topic dumps.
//!
//! Every check is a pure function of its inputs. A failed result always
//! names a concrete identity, event or count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::SimError;
use crate::log::{decode_segment, encode_segment, Record, TopicId};
use crate::pipeline::{synthetic_payload, transform, PipelineSpec, StageKind};
use crate::sim::{Cluster, SimTime, TraceEvent};
use crate::world::TopicDump;

/// A named check and its arguments as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckSpec {
    pub name: String,
    pub args: BTreeMap<String, String>,
}

impl CheckSpec {
    pub fn new(name: &str) -> Self {
        CheckSpec {
            name: name.to_string(),
            args: BTreeMap::new(),
        }
    }

    pub fn arg(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }
}

/// Known checks with their required and optional arguments.
pub const CHECKS: &[(&str, &[&str], &[&str])] = &[
    ("no_loss", &[], &[]),
    ("equivalence", &["with"], &[]),
    ("order", &[], &[]),
    ("reschedule", &["node", "stage", "bound"], &[]),
    ("buffering", &[], &[]),
    ("survivors", &["at"], &[]),
    ("continues", &["after"], &["min"]),
    ("degraded", &["cluster"], &[]),
    ("leaders", &[], &[]),
    ("affinity", &[], &[]),
];

pub fn check_signature(name: &str) -> Option<(&'static [&'static str], &'static [&'static str])> {
    CHECKS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(_, r, o)| (*r, *o))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub evidence: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, evidence: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            evidence: evidence.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let result = if self.passed { "pass" } else { "fail" };
        write!(
            f,
            "check={} result={} evidence={}",
            self.name, result, self.evidence
        )
    }
}

type Identity = (String, u64);

fn identity_of(e: &TraceEvent) -> Option<Identity> {
    Some((e.get("producer")?.to_string(), e.get_u64("seq")?))
}

fn show(id: &Identity) -> String {
    format!("{}:{}", id.0, id.1)
}

/// Deduplicated content of a topic across all its replica dumps: the first
/// payload seen per identity.
pub fn dedup_view(dumps: &[TopicDump], topic: &TopicId) -> BTreeMap<Identity, Vec<u8>> {
    let mut view = BTreeMap::new();
    for d in dumps.iter().filter(|d| &d.topic == topic) {
        for r in &d.records {
            view.entry(r.identity()).or_insert_with(|| r.payload.clone());
        }
    }
    view
}

fn acks<'a>(
    trace: &'a [TraceEvent],
    topic: Option<&'a str>,
    stage: Option<&'a str>,
) -> impl Iterator<Item = &'a TraceEvent> + 'a {
    trace.iter().filter(move |e| {
        e.kind == "ack"
            && topic.is_none_or(|t| e.get("topic") == Some(t))
            && stage.is_none_or(|s| e.get("stage") == Some(s))
    })
}

/// Whether the pipeline's transforms would keep a source record.
fn survives_chain(pipeline: &PipelineSpec, id: &Identity) -> bool {
    let mut rec = Record {
        producer_id: id.0.clone(),
        producer_seq: id.1,
        payload: synthetic_payload(&id.0, id.1),
        origin_time: SimTime::ZERO,
    };
    for s in &pipeline.stages {
        if matches!(s.kind, StageKind::Source | StageKind::Sink) {
            continue;
        }
        let Some(f) = transform::lookup(&s.transform) else {
            continue;
        };
        match f(&rec) {
            Some(r) => rec = r,
            None => return false,
        }
    }
    true
}

/// Every source record acknowledged by the first topic is present in the
/// deduplicated sink view, unless a transform filters it out.
pub fn no_loss(trace: &[TraceEvent], dumps: &[TopicDump], pipeline: &PipelineSpec) -> CheckResult {
    const NAME: &str = "no_loss";
    let (Some(source), Some(sink)) = (pipeline.source(), pipeline.sink_topic()) else {
        return CheckResult::new(NAME, false, "pipeline_has_no_source_or_sink");
    };
    let view = dedup_view(dumps, sink);
    let mut acked = BTreeSet::new();
    let mut missing = Vec::new();
    for e in acks(trace, None, Some(&source.stage_id)) {
        let Some(id) = identity_of(e) else { continue };
        if !acked.insert(id.clone()) || !survives_chain(pipeline, &id) {
            continue;
        }
        if !view.contains_key(&id) {
            missing.push((id, e.time));
        }
    }
    match missing.first() {
        None => CheckResult::new(
            NAME,
            true,
            format!("acked={},present={}", acked.len(), acked.len()),
        ),
        Some((id, t)) => CheckResult::new(
            NAME,
            false,
            format!(
                "acked={},missing={},first={},acked_at={}",
                acked.len(),
                missing.len(),
                show(id),
                t
            ),
        ),
    }
}

/// Deduplicated (identity, payload) multisets of two sink views are equal.
pub fn equivalence(a: &[TopicDump], b: &[TopicDump], topic: &TopicId) -> CheckResult {
    const NAME: &str = "equivalence";
    let va = dedup_view(a, topic);
    let vb = dedup_view(b, topic);
    for (id, pa) in &va {
        match vb.get(id) {
            None => {
                return CheckResult::new(NAME, false, format!("missing_in_b={}", show(id)))
            }
            Some(pb) if pb != pa => {
                return CheckResult::new(NAME, false, format!("payload_differs={}", show(id)))
            }
            _ => {}
        }
    }
    if let Some(id) = vb.keys().find(|id| !va.contains_key(*id)) {
        return CheckResult::new(NAME, false, format!("missing_in_a={}", show(id)));
    }
    CheckResult::new(NAME, true, format!("records={}", va.len()))
}

/// On every replica of the sink topic, first occurrences of each producer's
/// records appear in producer_seq order.
pub fn order(dumps: &[TopicDump], topic: &TopicId) -> CheckResult {
    const NAME: &str = "order";
    let mut replicas = 0;
    for d in dumps.iter().filter(|d| &d.topic == topic) {
        replicas += 1;
        let mut seen = BTreeSet::new();
        let mut last: BTreeMap<&str, u64> = BTreeMap::new();
        for (off, r) in d.records.iter().enumerate() {
            if !seen.insert(r.identity()) {
                continue;
            }
            let prev = last.insert(&r.producer_id, r.producer_seq);
            if prev.is_some_and(|p| p > r.producer_seq) {
                return CheckResult::new(
                    NAME,
                    false,
                    format!(
                        "replica={},offset={off},record={}:{},after_seq={}",
                        d.node,
                        r.producer_id,
                        r.producer_seq,
                        prev.unwrap()
                    ),
                );
            }
        }
    }
    CheckResult::new(NAME, true, format!("replicas={replicas}"))
}

fn placed_stage<'a>(e: &'a TraceEvent, stage: &str) -> Option<Option<&'a str>> {
    (e.kind == "config_commit" && e.get("cmd") == Some("place_stage") && e.get("stage") == Some(stage))
        .then(|| e.get("node").filter(|n| *n != "none"))
}

/// After `node` crashes while hosting `stage`, the stage is committed to a
/// different node within `bound` ms of the crash and then processes input
/// there. Err means the check does not apply to this trace.
pub fn reschedule(
    trace: &[TraceEvent],
    node: &str,
    stage: &str,
    bound: u64,
) -> Result<CheckResult, String> {
    const NAME: &str = "reschedule";
    let mut host: Option<&str> = None;
    let mut crash = None;
    for e in trace {
        if let Some(n) = placed_stage(e, stage) {
            host = n;
        }
        if e.kind == "crash" && e.node_is(node) && host == Some(node) {
            crash = Some(e.time);
            break;
        }
    }
    let Some(t) = crash else {
        return Err(format!("{stage} was not hosted on {node} when it crashed"));
    };
    let deadline = t + bound;
    let placed = trace
        .iter()
        .filter(|e| e.time > t && e.time <= deadline)
        .find_map(|e| match placed_stage(e, stage) {
            Some(Some(n)) if n != node => Some((e.time, n)),
            _ => None,
        });
    let Some((at, target)) = placed else {
        return Ok(CheckResult::new(
            NAME,
            false,
            format!("crash_at={t},no_placement_before={deadline}"),
        ));
    };
    let step = trace.iter().find(|e| {
        e.time >= at
            && e.kind == "stage_step"
            && e.node_is(target)
            && e.get("stage") == Some(stage)
            && e.get_u64("in").is_some_and(|n| n > 0)
    });
    Ok(match step {
        Some(s) => CheckResult::new(
            NAME,
            true,
            format!(
                "crash_at={t},placed_on={target},placed_at={at},delay={},first_step_at={}",
                at - t,
                s.time
            ),
        ),
        None => CheckResult::new(
            NAME,
            false,
            format!("crash_at={t},placed_on={target},placed_at={at},no_progress"),
        ),
    })
}

fn wan_windows(trace: &[TraceEvent]) -> Vec<(SimTime, Option<SimTime>)> {
    let mut out = Vec::new();
    let mut open = None;
    for e in trace.iter().filter(|e| e.get("domain") == Some("wan")) {
        match (e.kind.as_str(), open) {
            ("partition", None) => open = Some(e.time),
            ("heal", Some(p)) => {
                out.push((p, Some(e.time)));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(p) = open {
        out.push((p, None));
    }
    out
}

/// During each WAN partition no bridge appends land in the cloud, the edge
/// input keeps committing source traffic, and after heal everything acked on
/// the bridge input is acked on its output.
pub fn buffering(trace: &[TraceEvent], pipeline: &PipelineSpec) -> Result<CheckResult, String> {
    const NAME: &str = "buffering";
    let windows = wan_windows(trace);
    if windows.is_empty() {
        return Err("trace has no wan partition".into());
    }
    let bridges: Vec<_> = pipeline
        .stages
        .iter()
        .filter(|s| s.kind == StageKind::Bridge)
        .collect();
    if bridges.is_empty() {
        return Err("pipeline has no bridge stage".into());
    }
    let source = pipeline.source().map(|s| s.stage_id.as_str());
    let mut evidence = Vec::new();
    for (p, h) in &windows {
        let inside = |e: &&TraceEvent| e.time >= *p && h.is_none_or(|h| e.time < h);
        for b in &bridges {
            let leaked = trace
                .iter()
                .filter(inside)
                .find(|e| e.kind == "append" && e.get("stage") == Some(&b.stage_id));
            if let Some(e) = leaked {
                return Ok(CheckResult::new(
                    NAME,
                    false,
                    format!("bridge_append_in_window_at={},seq={},stage={}", e.time, e.seq, b.stage_id),
                ));
            }
            let input = b.input.as_ref().unwrap().as_str();
            let source_acks = trace
                .iter()
                .filter(inside)
                .filter(|e| e.kind == "ack" && e.get("stage") == source && e.get("topic") == Some(input))
                .count();
            let commits = trace
                .iter()
                .filter(inside)
                .filter(|e| e.kind == "commit" && e.get("topic") == Some(input))
                .count();
            if source_acks > 0 && commits == 0 {
                return Ok(CheckResult::new(
                    NAME,
                    false,
                    format!("window={p},input={input},source_acks={source_acks},commits=0"),
                ));
            }
            evidence.push(format!(
                "window={p}..{},source_acks={source_acks},input_commits={commits}",
                h.map_or("open".to_string(), |h| h.to_string())
            ));
        }
    }
    if windows.iter().any(|(_, h)| h.is_none()) {
        evidence.push("drain=not-evaluated".into());
        return Ok(CheckResult::new(NAME, true, evidence.join(",")));
    }
    for b in &bridges {
        let input = b.input.as_ref().unwrap().as_str();
        let output = b.output.as_ref().unwrap().as_str();
        let forwarded: BTreeSet<_> = acks(trace, Some(output), Some(&b.stage_id))
            .filter_map(identity_of)
            .collect();
        let backlog: BTreeSet<_> = acks(trace, Some(input), None)
            .filter_map(identity_of)
            .collect();
        if let Some(id) = backlog.iter().find(|id| !forwarded.contains(*id)) {
            let left = backlog.difference(&forwarded).count();
            return Ok(CheckResult::new(
                NAME,
                false,
                format!("undrained={left},first={}", show(id)),
            ));
        }
        evidence.push(format!("drained={}", backlog.len()));
    }
    Ok(CheckResult::new(NAME, true, evidence.join(",")))
}

/// Every record acknowledged on any topic before `at` is present in some
/// surviving replica dump of that topic.
pub fn survivors(trace: &[TraceEvent], dumps: &[TopicDump], at: SimTime) -> CheckResult {
    const NAME: &str = "survivors";
    let mut views: BTreeMap<&str, BTreeSet<Identity>> = BTreeMap::new();
    for d in dumps {
        views
            .entry(d.topic.as_str())
            .or_default()
            .extend(d.records.iter().map(Record::identity));
    }
    let mut checked = 0;
    for e in trace.iter().filter(|e| e.kind == "ack" && e.time < at) {
        let (Some(topic), Some(id)) = (e.get("topic"), identity_of(e)) else {
            continue;
        };
        checked += 1;
        if !views.get(topic).is_some_and(|v| v.contains(&id)) {
            return CheckResult::new(
                NAME,
                false,
                format!("topic={topic},missing={},acked_at={}", show(&id), e.time),
            );
        }
    }
    CheckResult::new(NAME, true, format!("acked_before={at},checked={checked}"))
}

/// The sink keeps delivering after `after`.
pub fn continues(trace: &[TraceEvent], after: SimTime, min: usize) -> CheckResult {
    const NAME: &str = "continues";
    let n = trace
        .iter()
        .filter(|e| e.kind == "sink_deliver" && e.time > after)
        .count();
    CheckResult::new(NAME, n >= min, format!("deliveries_after={after}:{n},min={min}"))
}

/// While `cluster` has no master quorum the sink still delivers and no new
/// configuration epoch is committed there.
pub fn degraded(trace: &[TraceEvent], cluster: Cluster) -> CheckResult {
    const NAME: &str = "degraded";
    let c = cluster.as_str();
    let end = trace.last().map_or(SimTime::ZERO, |e| e.time + 1);
    let mut windows = Vec::new();
    let mut open = None;
    for e in trace
        .iter()
        .filter(|e| e.kind == "degraded" && e.get("cluster") == Some(c))
    {
        let nq = e.get("status").is_some_and(|s| s.contains("no_quorum"));
        match (nq, open) {
            (true, None) => open = Some(e.time),
            (false, Some(s)) => {
                windows.push((s, e.time));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        windows.push((s, end));
    }
    if windows.is_empty() {
        return CheckResult::new(NAME, false, format!("cluster={c},no_quorumless_window"));
    }
    let mut evidence = Vec::new();
    for (s, t) in windows {
        let commit_epoch = |e: &TraceEvent| {
            (e.kind == "config_commit" && e.get("cluster") == Some(c))
                .then(|| e.get_u64("epoch"))
                .flatten()
        };
        let before = trace
            .iter()
            .filter(|e| e.time < s)
            .filter_map(commit_epoch)
            .max()
            .unwrap_or(0);
        let inside: Vec<_> = trace.iter().filter(|e| e.time >= s && e.time < t).collect();
        if let Some(e) = inside
            .iter()
            .find(|e| commit_epoch(e).is_some_and(|ep| ep > before))
        {
            return CheckResult::new(
                NAME,
                false,
                format!("window={s}..{t},epoch_committed_at={},seq={}", e.time, e.seq),
            );
        }
        let delivered = inside.iter().filter(|e| e.kind == "sink_deliver").count();
        if delivered == 0 {
            return CheckResult::new(NAME, false, format!("window={s}..{t},sink_deliveries=0"));
        }
        evidence.push(format!("window={s}..{t},epoch={before},sink_deliveries={delivered}"));
    }
    CheckResult::new(NAME, true, evidence.join(","))
}

/// At most one leader is elected per cluster and term.
pub fn leaders(trace: &[TraceEvent]) -> CheckResult {
    const NAME: &str = "leaders";
    let mut seen: BTreeMap<(&str, u64), &TraceEvent> = BTreeMap::new();
    for e in trace.iter().filter(|e| e.kind == "leader_elected") {
        let (Some(c), Some(term)) = (e.get("cluster"), e.get_u64("term")) else {
            continue;
        };
        if let Some(prev) = seen.insert((c, term), e) {
            return CheckResult::new(
                NAME,
                false,
                format!(
                    "cluster={c},term={term},leaders={}+{},at={}",
                    prev.node.as_deref().unwrap_or("-"),
                    e.node.as_deref().unwrap_or("-"),
                    e.time
                ),
            );
        }
    }
    CheckResult::new(NAME, true, format!("elections={}", seen.len()))
}

/// Stages only run on nodes of a cluster one of their wirings admits.
pub fn affinity(
    trace: &[TraceEvent],
    allowed: &BTreeMap<String, BTreeSet<Cluster>>,
    cluster_of: &BTreeMap<String, Cluster>,
) -> CheckResult {
    const NAME: &str = "affinity";
    let mut checked = 0;
    for e in trace
        .iter()
        .filter(|e| matches!(e.kind.as_str(), "stage_start" | "stage_step" | "sink_deliver"))
    {
        let (Some(stage), Some(node)) = (e.get("stage"), e.node.as_deref()) else {
            continue;
        };
        checked += 1;
        let ok = cluster_of
            .get(node)
            .is_some_and(|c| allowed.get(stage).is_some_and(|a| a.contains(c)));
        if !ok {
            return CheckResult::new(
                NAME,
                false,
                format!("stage={stage},node={node},at={},seq={}", e.time, e.seq),
            );
        }
    }
    CheckResult::new(NAME, true, format!("events={checked}"))
}

/// Writes one `<topic>.<node>.seg` file per replica.
pub fn write_dumps(dir: &Path, dumps: &[TopicDump]) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    for d in dumps {
        fs::write(dir.join(d.file_name()), encode_segment(&d.records))?;
    }
    Ok(())
}

/// Reads every `.seg` file in `dir`, sorted by file name.
pub fn read_dumps(dir: &Path) -> Result<Vec<TopicDump>, SimError> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".seg"))
        .collect();
    names.sort();
    let mut out = Vec::new();
    for name in names {
        let malformed = |message: &str| SimError::Dump {
            file: name.clone(),
            message: message.to_string(),
        };
        let stem = name.strip_suffix(".seg").unwrap();
        let (topic, node) = stem
            .split_once('.')
            .ok_or_else(|| malformed("expected <topic>.<node>.seg"))?;
        let bytes = fs::read(dir.join(&name))?;
        let records = decode_segment(&bytes).map_err(|e| malformed(&e.to_string()))?;
        out.push(TopicDump {
            topic: TopicId::new(topic),
            node: node.to_string(),
            records,
        });
    }
    Ok(out)
}
