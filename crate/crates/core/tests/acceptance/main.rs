//! Acceptance suite. One line per criterion; exits nonzero if any fails.
//!
//! Run with `cargo test -p edgeplane-core --test acceptance`.

mod log_schedule;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use edgeplane_core::check::{self, CheckResult, CheckSpec};
use edgeplane_core::cluster::{ManagerParams, RaftParams};
use edgeplane_core::log::TopicId;
use edgeplane_core::scenario::{builtin, builtin_names, FaultEvent};
use edgeplane_core::sim::{trace, FaultAction};
use edgeplane_core::{Cluster, ExecOptions, Outcome, Scenario, SimTime};

// Wall-clock limits. Debug builds run several times slower than release, so
// these are the stated limits doubled when debug assertions are on.
const SLOW: u32 = if cfg!(debug_assertions) { 2 } else { 1 };
const LIMIT_SHORT: Duration = Duration::from_secs(5);
const LIMIT_CASE_STUDY: Duration = Duration::from_secs(10);

const SOURCE_RECORDS_C1: usize = 200;
const MIN_WINDOW_RECORDS: u64 = 50;
const FAILOVER_SEEDS: std::ops::RangeInclusive<u64> = 1..=20;
const FAILOVER_ROUNDS: u64 = 3;

type Verdict = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Verdict);

fn sc(name: &str) -> Scenario {
    builtin(name).unwrap_or_else(|| panic!("built-in {name} missing"))
}

fn exec(s: &Scenario) -> Result<Outcome, String> {
    s.execute(&ExecOptions::default()).map_err(|e| e.to_string())
}

fn require(r: &CheckResult) -> Result<(), String> {
    if r.passed {
        Ok(())
    } else {
        Err(r.to_string())
    }
}

fn require_named(o: &Outcome, name: &str) -> Result<String, String> {
    let r = o
        .results
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| format!("no `{name}` check configured"))?;
    require(r)?;
    Ok(r.evidence.clone())
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    let limit = limit * SLOW;
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

fn count_kind(o: &Outcome, kind: &str) -> usize {
    o.trace.iter().filter(|e| e.kind == kind).count()
}

fn generated_records(trace: &[trace::TraceEvent], from: SimTime, to: SimTime) -> u64 {
    trace
        .iter()
        .filter(|e| e.kind == "generate" && e.time >= from && e.time < to)
        .filter_map(|e| e.get_u64("count"))
        .sum()
}

/// 1. Same logical flow with the transform moved across the WAN boundary.
fn c1() -> Verdict {
    let t = Instant::now();
    let (a, b) = (sc("scenario1"), sc("scenario2"));
    assert_eq!(a.seed, b.seed);
    let (trace_a, dumps_a) = a.simulate(a.seed, a.run_until).map_err(|e| e.to_string())?;
    let (_, dumps_b) = b.simulate(b.seed, b.run_until).map_err(|e| e.to_string())?;
    let generated = generated_records(&trace_a, SimTime::ZERO, a.run_until);
    if generated as usize != SOURCE_RECORDS_C1 {
        return Err(format!("generated {generated} source records, want {SOURCE_RECORDS_C1}"));
    }
    let sink = TopicId::new("CT-2");
    let r = check::equivalence(&dumps_a, &dumps_b, &sink);
    require(&r)?;
    within(t, LIMIT_SHORT)?;
    Ok(format!("records={generated} {}", r.evidence))
}

/// 2. Crash the host of PC-3; it is re-placed within the derived bound.
fn c2() -> Verdict {
    let t = Instant::now();
    let m = ManagerParams::default();
    let bound = m.fail_timeout + 5 * m.heartbeat_interval + 500;
    let mut s = sc("scenario3");
    let crash = s
        .faults
        .iter()
        .find_map(|f| match &f.action {
            FaultAction::Crash(n) => Some((f.at, n.clone())),
            _ => None,
        })
        .ok_or("scenario3 has no crash")?;
    // Crash whichever node actually hosts PC-3 at the crash instant.
    let mut w = s.world(s.seed).map_err(|e| e.to_string())?;
    w.run_until(SimTime(crash.0.millis() - 1)).map_err(|e| e.to_string())?;
    let host = w.host_of("PC-3").ok_or("PC-3 unplaced before the crash")?;
    s.faults = vec![FaultEvent {
        at: crash.0,
        action: FaultAction::Crash(host.clone()),
    }];
    s.checks.retain(|c| c.name != "reschedule");
    s.checks.push(
        CheckSpec::new("reschedule")
            .arg("node", &host)
            .arg("stage", "PC-3")
            .arg("bound", bound),
    );
    let o = exec(&s)?;
    let ev = require_named(&o, "reschedule")?;
    require_named(&o, "no_loss")?;
    within(t, LIMIT_SHORT)?;
    Ok(format!("host={host} bound={bound} {ev}"))
}

/// 3. WAN partition long enough to cover at least 50 source records.
fn c3() -> Verdict {
    let t = Instant::now();
    let s = sc("wan_outage");
    let window = |want: fn(&FaultAction) -> bool| {
        s.faults.iter().find(|f| want(&f.action)).map(|f| f.at)
    };
    let from = window(|a| matches!(a, FaultAction::Partition(_))).ok_or("no partition")?;
    let to = window(|a| matches!(a, FaultAction::Heal(_))).unwrap_or(s.run_until);
    let o = exec(&s)?;
    let inside = generated_records(&o.trace, from, to);
    if inside < MIN_WINDOW_RECORDS {
        return Err(format!("window {from}..{to} covers {inside} records"));
    }
    let ev = require_named(&o, "buffering")?;
    require_named(&o, "no_loss")?;
    within(t, LIMIT_SHORT)?;
    Ok(format!("window={from}..{to} records_in_window={inside} {ev}"))
}

/// 4. Worker crash, re-replication, then a master crash.
fn c4() -> Verdict {
    let t = Instant::now();
    let s = sc("case_study_5node");
    if !s.re_replication {
        return Err("re-replication disabled".into());
    }
    let crashes: Vec<_> = s
        .faults
        .iter()
        .filter_map(|f| match &f.action {
            FaultAction::Crash(n) => Some((f.at, n.clone())),
            _ => None,
        })
        .collect();
    let [(t1, worker), (t2, master)] = crashes.as_slice() else {
        return Err(format!("expected two crashes, got {crashes:?}"));
    };
    let o = exec(&s)?;
    // Every replica the worker held is replaced and the replacement catches
    // up before the second crash.
    let reassigned: Vec<_> = o
        .trace
        .iter()
        .filter(|e| {
            e.kind == "config_commit"
                && e.get("cmd") == Some("reassign_replica")
                && e.get("old") == Some(worker.as_str())
                && e.get("rejected").is_none()
                && e.time > *t1
        })
        .collect();
    if reassigned.is_empty() {
        return Err(format!("no replica of {worker} reassigned"));
    }
    for r in &reassigned {
        let (topic, new) = (r.get("topic").unwrap(), r.get("new").unwrap());
        let joined = o.trace.iter().any(|e| {
            e.kind == "isr_join"
                && e.get("topic") == Some(topic)
                && e.get("replica") == Some(new)
                && e.time >= r.time
                && e.time < *t2
        });
        if !joined {
            return Err(format!("{topic}: replacement {new} not in sync before {t2}"));
        }
    }
    require_named(&o, "no_loss")?;
    let cont = require_named(&o, "continues")?;
    within(t, LIMIT_CASE_STUDY)?;
    Ok(format!(
        "crash {worker}@{t1} then {master}@{t2} reassigned={} {cont}",
        reassigned.len()
    ))
}

/// Runs `s` with exactly the given nodes crashed at `at` and no repair, and
/// checks that every record acked before `at` survives somewhere.
fn survive_pair(base: &Scenario, pair: [&str; 2], at: SimTime) -> Result<String, String> {
    let mut s = base.clone();
    s.re_replication = false;
    s.faults = pair
        .iter()
        .map(|n| FaultEvent {
            at,
            action: FaultAction::Crash(n.to_string()),
        })
        .collect();
    s.checks = vec![CheckSpec::new("survivors").arg("at", at.millis())];
    let o = exec(&s)?;
    let r = &o.results[0];
    if !r.passed {
        return Err(format!("{}+{}: {}", pair[0], pair[1], r.evidence));
    }
    if count_kind(&o, "ack") == 0 {
        return Err("nothing acked".into());
    }
    Ok(r.evidence.clone())
}

/// 5. Two nodes crash at the same instant.
fn c5() -> Verdict {
    let mut runs = 0;
    let three = sc("threenode");
    let edge: Vec<_> = three
        .nodes
        .iter()
        .filter(|n| n.cluster == Cluster::Edge)
        .map(|n| n.node_id.clone())
        .collect();
    for (i, a) in edge.iter().enumerate() {
        for b in &edge[i + 1..] {
            survive_pair(&three, [a, b], SimTime(3000))?;
            runs += 1;
        }
    }
    // Both workers, which lead the edge topics, in the larger topology.
    let five = sc("case_study_5node");
    survive_pair(&five, ["rpi-node-1", "rpi-node-2"], SimTime(3000))?;
    survive_pair(&five, ["rpi-node-1", "rpi-master-1"], SimTime(3000))?;
    runs += 2;
    Ok(format!("pairs={runs}"))
}

/// 6. Three-node edge cluster survives any single crash.
fn c6() -> Verdict {
    let base = sc("threenode");
    let (at, _) = base
        .faults
        .iter()
        .find_map(|f| match &f.action {
            FaultAction::Crash(n) => Some((f.at, n.clone())),
            _ => None,
        })
        .ok_or("threenode has no crash")?;
    let mut out = Vec::new();
    for n in base.nodes.iter().filter(|n| n.cluster == Cluster::Edge) {
        let mut s = base.clone();
        s.faults = vec![FaultEvent {
            at,
            action: FaultAction::Crash(n.node_id.clone()),
        }];
        let o = exec(&s)?;
        require_named(&o, "no_loss").map_err(|e| format!("{}: {e}", n.node_id))?;
        let ev = require_named(&o, "continues").map_err(|e| format!("{}: {e}", n.node_id))?;
        out.push(format!("{}:{ev}", n.node_id));
    }
    Ok(out.join(" "))
}

/// 7. Config-store leader crash; a successor commits within three
///    election timeouts.
fn c7() -> Verdict {
    let raft = RaftParams::default();
    let limit = FAILOVER_ROUNDS * raft.election_max;
    let s = sc("scenario1");
    let mut worst = 0;
    for seed in FAILOVER_SEEDS {
        let mut w = s.world(seed).map_err(|e| e.to_string())?;
        w.run_until(SimTime(2000)).map_err(|e| e.to_string())?;
        let leader = w
            .config_leader(Cluster::Edge)
            .ok_or(format!("seed {seed}: no edge leader at 2000"))?;
        let term = w
            .actor(&leader)
            .and_then(|a| a.manager())
            .map(|m| m.store.term())
            .ok_or("leader has no manager")?;
        let crashed_at = w.now();
        w.crash(&leader);
        w.run_until(crashed_at + limit + 1).map_err(|e| e.to_string())?;
        let first = w.trace().iter().find(|e| {
            e.kind == "config_commit"
                && e.time > crashed_at
                && e.get("cluster") == Some("edge")
                && e.get_u64("term").is_some_and(|t| t > term)
        });
        match first {
            Some(e) if e.time - crashed_at <= limit => worst = worst.max(e.time - crashed_at),
            Some(e) => {
                return Err(format!("seed {seed}: first commit after {}ms", e.time - crashed_at))
            }
            None => return Err(format!("seed {seed}: no new-term commit within {limit}ms")),
        }
    }
    Ok(format!("seeds={FAILOVER_SEEDS:?} limit={limit}ms worst={worst}ms"))
}

/// 8. Two of three edge masters lost: data keeps flowing, config frozen.
fn c8() -> Verdict {
    let mut s = sc("case_study_5node");
    s.faults = ["rpi-master-2", "rpi-master-3"]
        .iter()
        .map(|n| FaultEvent {
            at: SimTime(3000),
            action: FaultAction::Crash(n.to_string()),
        })
        .collect();
    s.checks = vec![
        CheckSpec::new("degraded").arg("cluster", "edge"),
        CheckSpec::new("no_loss"),
    ];
    let o = exec(&s)?;
    let ev = require_named(&o, "degraded")?;
    require_named(&o, "no_loss")?;
    Ok(ev)
}

/// 9. Same seed, same bytes; other seed, other bytes and still passing.
fn c9() -> Verdict {
    let mut n = 0;
    for name in builtin_names() {
        let s = sc(name);
        let a = exec(&s)?;
        let b = exec(&s)?;
        if a.trace_text() != b.trace_text() {
            return Err(format!("{name}: traces differ at equal seed"));
        }
        let other = s
            .execute(&ExecOptions {
                seed: Some(s.seed + 1),
                ..ExecOptions::default()
            })
            .map_err(|e| e.to_string())?;
        if other.trace_text() == a.trace_text() {
            return Err(format!("{name}: seed change left the trace unchanged"));
        }
        if let Some(r) = other.results.iter().find(|r| !r.passed) {
            return Err(format!("{name} seed {}: {r}", s.seed + 1));
        }
        n += 1;
    }
    Ok(format!("scenarios={n}"))
}

/// 10. Randomized schedules on one replicated topic.
fn c10() -> Verdict {
    log_schedule::run_suite()
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "scenario equivalence", c1),
        (2, "reschedule after crash", c2),
        (3, "wan outage buffering", c3),
        (4, "sequential two-node failure", c4),
        (5, "simultaneous two-node failure", c5),
        (6, "three-node single failure", c6),
        (7, "master failover", c7),
        (8, "degraded mode", c8),
        (9, "determinism", c9),
        (10, "replicated log properties", c10),
    ];
    let only: BTreeSet<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let took = t.elapsed();
        match r {
            Ok(ev) => println!("criterion {n:>2} PASS {name} ({took:.2?}): {ev}"),
            Err(ev) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} ({took:.2?}): {ev}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
