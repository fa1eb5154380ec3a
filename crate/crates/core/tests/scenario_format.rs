use edgeplane_core::scenario::{builtin, builtin_names, builtin_scenarios, FaultEvent, Workload};
use edgeplane_core::sim::FaultAction;
use edgeplane_core::{ExecOptions, Scenario, SimTime};
use proptest::prelude::*;

const MINIMAL: &str = "\
name=mini
seed=3
run_until=4000

[nodes]
id=EN-1 cluster=edge role=master
id=CN-1 cluster=cloud role=master

[topics]
id=ET-1 cluster=edge rf=1
id=CT-1 cluster=cloud rf=1

[pipeline]
stage=PC-1 kind=source output=ET-1 affinity=edge
stage=PC-2 kind=bridge input=ET-1 output=CT-1 affinity=edge
stage=PC-3 kind=sink input=CT-1 affinity=cloud

[workload]
at=1500 generate=PC-1 count=5

[faults]

[checks]
check=no_loss
";

#[test]
fn builtin_scenario3_crashes_en3() {
    let s = builtin("scenario3").unwrap();
    assert_eq!(
        s.faults,
        vec![FaultEvent {
            at: SimTime(3000),
            action: FaultAction::Crash("EN-3".into()),
        }]
    );
}

#[test]
fn undefined_topic_names_the_line() {
    let text = MINIMAL.replace("output=CT-1 affinity=edge", "output=ET-9 affinity=edge");
    let err = Scenario::parse(&text).unwrap_err();
    let line = text.lines().position(|l| l.contains("ET-9")).unwrap() + 1;
    assert!(err.0.iter().any(|e| e.line == line && e.message.contains("ET-9")), "{err}");
}

#[test]
fn empty_faults_section_is_a_fault_free_run() {
    let s = Scenario::parse(MINIMAL).unwrap();
    assert!(s.faults.is_empty());
    let out = s.execute(&ExecOptions::default()).unwrap();
    assert!(out.passed(), "{}", out.report());
    assert!(!out.trace.iter().any(|e| e.kind == "crash" || e.kind == "partition"));
}

#[test]
fn errors_are_collected_per_line() {
    let text = MINIMAL
        .replace("rf=1\nid=CT-1", "rf=x\nid=CT-1")
        .replace("count=5", "count=five");
    let err = Scenario::parse(&text).unwrap_err();
    assert!(err.0.len() >= 2, "{err}");
    assert!(err.to_string().lines().all(|l| l.starts_with("line ")));
}

#[test]
fn rejects_bad_fault_order_and_times() {
    let restart_first = MINIMAL.replace("[faults]\n", "[faults]\nat=2000 restart=EN-1\n");
    assert!(Scenario::parse(&restart_first).is_err());
    let heal_first = MINIMAL.replace("[faults]\n", "[faults]\nat=2000 heal=wan\n");
    assert!(Scenario::parse(&heal_first).is_err());
    let late = MINIMAL.replace("[faults]\n", "[faults]\nat=5000 crash=EN-1\n");
    assert!(Scenario::parse(&late).is_err());
    let unknown = MINIMAL.replace("[faults]\n", "[faults]\nat=2000 crash=EN-7\n");
    assert!(Scenario::parse(&unknown).is_err());
}

#[test]
fn rf_above_cluster_size_is_rejected() {
    let text = MINIMAL.replace("id=ET-1 cluster=edge rf=1", "id=ET-1 cluster=edge rf=3");
    assert!(Scenario::parse(&text).is_err());
}

#[test]
fn check_arguments_are_validated() {
    let missing = MINIMAL.replace("check=no_loss", "check=reschedule node=EN-1 stage=PC-2");
    assert!(Scenario::parse(&missing).is_err());
    let wrong_stage =
        MINIMAL.replace("check=no_loss", "check=reschedule node=EN-1 stage=PC-9 bound=10");
    assert!(Scenario::parse(&wrong_stage).is_err());
    let unknown = MINIMAL.replace("check=no_loss", "check=latency");
    assert!(Scenario::parse(&unknown).is_err());
}

#[test]
fn scenario1_wiring() {
    let s = builtin("scenario1").unwrap();
    let chain: Vec<String> = s
        .pipeline
        .stages
        .iter()
        .map(|st| {
            let input = st.input.as_ref().map(|t| t.as_str()).unwrap_or("");
            let output = st.output.as_ref().map(|t| t.as_str()).unwrap_or("");
            format!("{input}>{}>{output}", st.stage_id)
        })
        .collect();
    assert_eq!(chain, [">PC-1>ET-1", "ET-1>PC-2>CT-1", "CT-1>PC-3>CT-2", "CT-2>PC-4>"]);
}

#[test]
fn builtins_parse_and_are_listed() {
    let names: Vec<_> = builtin_names().collect();
    assert_eq!(names.len(), builtin_scenarios().len());
    for n in [
        "scenario1",
        "scenario2",
        "scenario3",
        "wan_outage",
        "threenode",
        "case_study_5node",
    ] {
        assert!(names.contains(&n), "{n} missing");
    }
}

#[test]
fn run_until_zero_has_only_setup_events() {
    let s = builtin("scenario1").unwrap();
    let out = s
        .execute(&ExecOptions {
            until: Some(SimTime::ZERO),
            ..ExecOptions::default()
        })
        .unwrap();
    assert!(out.trace.iter().all(|e| e.time == SimTime::ZERO));
    assert!(!out.trace.iter().any(|e| e.kind == "deliver" || e.kind == "append"));
}

#[test]
fn execute_twice_gives_identical_bytes() {
    let s = builtin("scenario1").unwrap();
    let opts = ExecOptions {
        seed: Some(7),
        ..ExecOptions::default()
    };
    let a = s.execute(&opts).unwrap();
    let b = s.execute(&opts).unwrap();
    assert_eq!(a.trace_text(), b.trace_text());
    assert!(a.passed());
}

#[test]
fn case_study_passes_all_checks() {
    let out = builtin("case_study_5node")
        .unwrap()
        .execute(&ExecOptions::default())
        .unwrap();
    assert!(out.passed(), "{}", out.report());
}

fn variant() -> impl Strategy<Value = Scenario> {
    let names: Vec<&'static str> = builtin_names().collect();
    (
        prop::sample::select(names),
        any::<u64>(),
        1usize..64,
        1u64..40,
        prop::bool::ANY,
    )
        .prop_map(|(name, seed, batch, count, drop_faults)| {
            let mut s = builtin(name).unwrap();
            s.seed = seed;
            s.batch = batch;
            for w in &mut s.workload {
                if let Workload::Generate { count: c, .. } = w {
                    *c = count;
                }
            }
            if drop_faults {
                s.faults.clear();
            }
            s
        })
}

proptest! {
    #[test]
    fn printed_scenarios_parse_back(s in variant()) {
        let text = s.to_string();
        let back = Scenario::parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, s);
    }
}
