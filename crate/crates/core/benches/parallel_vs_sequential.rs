//! Compares the rayon-backed sweep against the sequential fallback on the
//! same workload grid.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use traceshape::engine::{sweep, sweep_seq, SimConfig, SweepAxis};
use traceshape::indist::{
    deniability_report, deniability_report_seq, EnumLimits, PageCatalog, ReportOptions,
    TraceSequence,
};
use traceshape::scheduler::{SchedulerKind, SchedulerParams};
use traceshape::trace::Trace;
use traceshape::workload::WorkloadSpec;

fn sweep_base() -> SimConfig {
    let trace = Arc::new(Trace::uniform(200, 40).unwrap());
    let mut params = SchedulerParams::defaults(trace, 8);
    params.gamma = 256.0;
    params.m = 20;
    SimConfig {
        workload: WorkloadSpec::Poisson {
            rate: 0.4,
            n_users: 1,
        },
        scheduler_kind: SchedulerKind::Enhanced,
        params,
        duration_slots: 20_000,
        slot_duration_ms: 1.0,
        seed: 1,
        record_series: false,
    }
}

fn bench_sweep(c: &mut Criterion) {
    let base = sweep_base();
    let values = [64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0];
    let seeds = [1u64, 2, 3, 4];

    let mut group = c.benchmark_group("gamma_sweep");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| sweep(black_box(&base), SweepAxis::Gamma, &values, &seeds).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| sweep_seq(black_box(&base), SweepAxis::Gamma, &values, &seeds).unwrap())
    });
    group.finish();
}

fn bench_report(c: &mut Criterion) {
    // A catalog dense enough that packing work dominates.
    let mut entries = Vec::new();
    for i in 0..12 {
        let groups = vec![1 + (i % 2) as u32, (i % 3) as u32, 1];
        entries.push((format!("page{i}"), TraceSequence::new(groups).unwrap()));
    }
    for i in 0..6 {
        entries.push((format!("single{i}"), TraceSequence::new(vec![1]).unwrap()));
    }
    let catalog = PageCatalog::new(entries).unwrap();
    let limits = EnumLimits {
        max_multiplicity: 3,
        max_items: 5,
        node_budget: 50_000_000,
    };

    let mut group = c.benchmark_group("deniability_report");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| deniability_report(black_box(&catalog), &limits, ReportOptions::default()))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| deniability_report_seq(black_box(&catalog), &limits, ReportOptions::default()))
    });
    group.finish();
}

criterion_group!(benches, bench_sweep, bench_report);
criterion_main!(benches);
