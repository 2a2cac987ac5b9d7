use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use caliblab_core::environments::EnvSpec;
use caliblab_core::exec::ExecMode;
use caliblab_core::experiments::{run_scaling, ExperimentConfig, GroupsSpec};
use caliblab_core::forecasters::ForecasterSpec;
use caliblab_core::probes::{bucketing_probe, StrategyKind};
use caliblab_core::RationalValue;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("scaling_replicates");
    group.sample_size(10);
    for (name, mode) in MODES {
        let mut cfg = ExperimentConfig::new(
            "bench",
            EnvSpec::Rademacher,
            ForecasterSpec::NoisyHonest { q: 16, spread: 1 },
            GroupsSpec::Full,
        );
        cfg.horizons = vec![1 << 12];
        cfg.replicates = 16;
        cfg.mode = mode;
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_scaling(cfg).expect("valid config"))
        });
    }
    group.finish();
}

fn bucketing(c: &mut Criterion) {
    let mut group = c.benchmark_group("bucketing_replicates");
    group.sample_size(10);
    let h = RationalValue::new(1, 4).expect("const");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bucketing_probe(4096, h, StrategyKind::AvoidZero, 4096, 1, mode).expect("valid probe"))
        });
    }
    group.finish();
}

criterion_group!(benches, scaling, bucketing);
criterion_main!(benches);
