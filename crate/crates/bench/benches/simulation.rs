use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use edgeplane_core::check;
use edgeplane_core::log::TopicId;
use edgeplane_core::scenario::builtin;

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for name in ["scenario1", "wan_outage", "case_study_5node"] {
        let s = builtin(name).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| black_box(s.simulate(s.seed, s.run_until).unwrap()))
        });
    }
    g.finish();
}

fn checks(c: &mut Criterion) {
    let s = builtin("case_study_5node").unwrap();
    let (trace, dumps) = s.simulate(s.seed, s.run_until).unwrap();
    let sink = TopicId::new("CT-2");
    let mut g = c.benchmark_group("check");
    g.bench_function("no_loss", |b| {
        b.iter(|| black_box(check::no_loss(&trace, &dumps, &s.pipeline)))
    });
    g.bench_function("order", |b| b.iter(|| black_box(check::order(&dumps, &sink))));
    g.bench_function("equivalence", |b| {
        b.iter(|| black_box(check::equivalence(&dumps, &dumps, &sink)))
    });
    g.bench_function("evaluate_all", |b| {
        b.iter(|| black_box(s.evaluate(&trace, &dumps, None).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, simulate, checks);
criterion_main!(benches);
