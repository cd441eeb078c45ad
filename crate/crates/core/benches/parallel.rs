//! Parallel (rayon) vs. sequential paths over the same work.
//!
//! Build with `--no-default-features` to see the parallel entry points fall
//! back to the calling thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lrusim::channel::{sweep, sweep_seq, SweepSpec};
use lrusim::eval::{miss_rate, miss_rate_grid, AccessTrace};
use lrusim::par::map_indexed_seq;
use lrusim::plru_analysis::{run_table1, run_table1_seq, AnalysisSpec, InitCondition, Sequence};
use lrusim::{CacheGeometry, ChannelConfig, NoiseModel, PolicyKind, Protocol, ScheduleMode, ScheduleModel};

fn table1_trials(c: &mut Criterion) {
    let mut g = c.benchmark_group("table1");
    g.sample_size(10);
    for trials in [1_000usize, 10_000] {
        let spec = AnalysisSpec::new(PolicyKind::TreePlru, Sequence::Seq2, InitCondition::Random, 8).with_trials(trials);
        g.bench_with_input(BenchmarkId::new("parallel", trials), &spec, |b, s| b.iter(|| run_table1(black_box(s))));
        g.bench_with_input(BenchmarkId::new("sequential", trials), &spec, |b, s| {
            b.iter(|| run_table1_seq(black_box(s)))
        });
    }
    g.finish();
}

fn channel_sweep(c: &mut Criterion) {
    let base = ChannelConfig::new(Protocol::NoSharedMemory, 4);
    let mut spec = SweepSpec::new(base, ScheduleModel::new(ScheduleMode::HyperThreaded, 1, 1), NoiseModel::new(0.5));
    spec.ds = vec![2, 4, 6];
    spec.message_bits = 32;
    spec.repetitions = 2;
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| sweep(black_box(&spec))));
    g.bench_function("sequential", |b| b.iter(|| sweep_seq(black_box(&spec))));
    g.finish();
}

fn missrate_grid(c: &mut Criterion) {
    let geo = CacheGeometry::default();
    let traces: Vec<AccessTrace> = (0..4).map(|s| AccessTrace::zipf(&geo, 4096, 0.9, 50_000, s).unwrap()).collect();
    let policies = [PolicyKind::TrueLru, PolicyKind::TreePlru, PolicyKind::BIT_PLRU, PolicyKind::Fifo, PolicyKind::Random];
    let np = policies.len();
    let mut g = c.benchmark_group("missrate");
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| miss_rate_grid(black_box(&traces), geo, &policies, 0)));
    g.bench_function("sequential", |b| {
        b.iter(|| map_indexed_seq(traces.len() * np, |i| miss_rate(&traces[i / np], geo, policies[i % np], 0)))
    });
    g.finish();
}

criterion_group!(benches, table1_trials, channel_sweep, missrate_grid);
criterion_main!(benches);
