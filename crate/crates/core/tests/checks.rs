use std::fs;

use edgeplane_core::check::{self, read_dumps, write_dumps, CheckSpec};
use edgeplane_core::log::{Record, TopicId};
use edgeplane_core::scenario::{builtin, Workload};
use edgeplane_core::sim::trace;
use edgeplane_core::{ExecOptions, Outcome, Scenario, SimError, SimTime, TopicDump};

fn rec(producer: &str, seq: u64) -> Record {
    Record {
        producer_id: producer.into(),
        producer_seq: seq,
        payload: format!("{producer}#{seq}").into_bytes(),
        origin_time: SimTime(seq),
    }
}

fn dump(node: &str, records: Vec<Record>) -> TopicDump {
    TopicDump {
        topic: TopicId::new("CT-2"),
        node: node.into(),
        records,
    }
}

fn sink() -> TopicId {
    TopicId::new("CT-2")
}

fn run(s: &Scenario, until: Option<u64>) -> Outcome {
    s.execute(&ExecOptions {
        until: until.map(SimTime),
        ..ExecOptions::default()
    })
    .unwrap()
}

#[test]
fn dump_equals_itself() {
    let d = vec![dump("CN-1", (0..5).map(|i| rec("cam-EN-1", i)).collect())];
    assert!(check::equivalence(&d, &d, &sink()).passed);
}

#[test]
fn dropped_record_is_named() {
    let a = vec![dump("CN-1", (0..5).map(|i| rec("cam-EN-1", i)).collect())];
    let mut b = a.clone();
    b[0].records.remove(3);
    let r = check::equivalence(&a, &b, &sink());
    assert!(!r.passed);
    assert!(r.evidence.contains("cam-EN-1") && r.evidence.contains('3'), "{r}");
}

#[test]
fn duplicates_and_replica_spread_do_not_break_equivalence() {
    let a = vec![dump("CN-1", (0..4).map(|i| rec("p", i)).collect())];
    let b = vec![
        dump("CN-1", vec![rec("p", 0), rec("p", 1), rec("p", 1)]),
        dump("CN-2", vec![rec("p", 2), rec("p", 3), rec("p", 0)]),
    ];
    assert!(check::equivalence(&a, &b, &sink()).passed);
}

#[test]
fn payload_mismatch_fails_equivalence() {
    let a = vec![dump("CN-1", vec![rec("p", 0)])];
    let mut b = a.clone();
    b[0].records[0].payload = b"other".to_vec();
    assert!(!check::equivalence(&a, &b, &sink()).passed);
}

#[test]
fn order_ignores_retry_duplicates_but_catches_shuffles() {
    let retried = vec![dump(
        "CN-1",
        vec![rec("p", 0), rec("p", 1), rec("p", 0), rec("p", 1), rec("p", 2)],
    )];
    assert!(check::order(&retried, &sink()).passed);

    let interleaved = vec![dump(
        "CN-1",
        vec![rec("a", 0), rec("b", 0), rec("a", 1), rec("b", 1)],
    )];
    assert!(check::order(&interleaved, &sink()).passed);

    let shuffled = vec![dump("CN-1", vec![rec("p", 0), rec("p", 2), rec("p", 1)])];
    let r = check::order(&shuffled, &sink());
    assert!(!r.passed);
    assert!(r.evidence.contains("offset=2"), "{r}");
}

#[test]
fn reschedule_with_zero_bound_fails() {
    let s = builtin("scenario3").unwrap();
    let out = run(&s, None);
    let r = check::reschedule(&out.trace, "EN-3", "PC-3", 0).unwrap();
    assert!(!r.passed, "{r}");
    assert!(check::reschedule(&out.trace, "EN-3", "PC-3", 2000).unwrap().passed);
}

#[test]
fn reschedule_of_stage_never_on_node_is_a_config_error() {
    let s = builtin("scenario3").unwrap();
    let out = run(&s, None);
    // PC-4 runs in the cloud, so it was never on EN-3.
    assert!(check::reschedule(&out.trace, "EN-3", "PC-4", 2000).is_err());

    let mut bad = s.clone();
    bad.checks = vec![CheckSpec::new("reschedule")
        .arg("node", "EN-3")
        .arg("stage", "PC-4")
        .arg("bound", 2000)];
    match bad.evaluate(&out.trace, &out.dumps, None) {
        Err(SimError::CheckConfig { name, .. }) => assert_eq!(name, "reschedule"),
        other => panic!("expected a misconfiguration error, got {other:?}"),
    }
}

#[test]
fn buffering_without_partition_is_a_config_error() {
    let s = builtin("scenario1").unwrap();
    let out = run(&s, Some(3000));
    assert!(check::buffering(&out.trace, &s.pipeline).is_err());
}

#[test]
fn quiet_partition_passes_vacuously() {
    let mut s = builtin("wan_outage").unwrap();
    // Traffic only after the heal at 6000.
    for w in &mut s.workload {
        if let Workload::Generate { at, times, .. } = w {
            *at = SimTime(7000);
            *times = 10;
        }
    }
    let out = run(&s, None);
    let r = check::buffering(&out.trace, &s.pipeline).unwrap();
    assert!(r.passed, "{r}");
    assert!(r.evidence.contains("source_acks=0"), "{r}");
}

#[test]
fn truncated_run_leaves_drain_unevaluated() {
    let s = builtin("wan_outage").unwrap();
    let out = run(&s, Some(5000));
    let r = check::buffering(&out.trace, &s.pipeline).unwrap();
    assert!(r.passed, "{r}");
    assert!(r.evidence.contains("drain=not-evaluated"), "{r}");
    assert!(r.evidence.contains("window=3000..open"), "{r}");
}

#[test]
fn no_loss_reports_missing_acked_record() {
    let s = builtin("scenario1").unwrap();
    let out = run(&s, None);
    let ok = check::no_loss(&out.trace, &out.dumps, &s.pipeline);
    assert!(ok.passed, "{ok}");
    assert!(ok.evidence.starts_with("acked=200"), "{ok}");

    let mut dumps = out.dumps.clone();
    for d in dumps.iter_mut().filter(|d| d.topic == sink()) {
        d.records.retain(|r| r.producer_seq != 17);
    }
    let r = check::no_loss(&out.trace, &dumps, &s.pipeline);
    assert!(!r.passed);
    assert!(r.evidence.contains(":17"), "{r}");
}

#[test]
fn checker_is_pure() {
    let s = builtin("scenario3").unwrap();
    let out = run(&s, None);
    let a = s.evaluate(&out.trace, &out.dumps, None).unwrap();
    let b = s.evaluate(&out.trace, &out.dumps, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checks_over_files_match_in_memory() {
    let s = builtin("scenario3").unwrap();
    let out = run(&s, None);
    let dir = tempfile::tempdir().unwrap();
    write_dumps(dir.path(), &out.dumps).unwrap();
    let text = out.trace_text();
    let events = trace::parse(&text).unwrap();
    assert_eq!(events, out.trace);
    let dumps = read_dumps(dir.path()).unwrap();
    assert_eq!(dumps.len(), out.dumps.len());
    assert_eq!(s.evaluate(&events, &dumps, None).unwrap(), out.results);
}

#[test]
fn malformed_dump_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    write_dumps(dir.path(), &[dump("CN-1", vec![rec("p", 0), rec("p", 1)])]).unwrap();
    let path = dir.path().join("CT-2.CN-1.seg");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    match read_dumps(dir.path()) {
        Err(SimError::Dump { file, .. }) => assert_eq!(file, "CT-2.CN-1.seg"),
        other => panic!("expected a dump error, got {other:?}"),
    }

    let bad_name = tempfile::tempdir().unwrap();
    fs::write(bad_name.path().join("nodot.seg"), b"").unwrap();
    assert!(matches!(read_dumps(bad_name.path()), Err(SimError::Dump { .. })));
}

#[test]
fn survivors_detects_a_lost_ack() {
    let s = builtin("scenario1").unwrap();
    let out = run(&s, None);
    assert!(check::survivors(&out.trace, &out.dumps, SimTime(9000)).passed);
    let only_sink: Vec<_> = out.dumps.iter().filter(|d| d.topic == sink()).cloned().collect();
    let r = check::survivors(&out.trace, &only_sink, SimTime(9000));
    assert!(!r.passed, "{r}");
}
