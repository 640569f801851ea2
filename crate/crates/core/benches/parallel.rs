//! Sequential vs. rayon-parallel wall time on the main data-parallel loops.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use wfkit::classic::{train_forest, ForestConfig};
use wfkit::defense::{defend_dataset, DefenseParams};
use wfkit::features::FeatureSpec;
use wfkit::par::ExecMode;
use wfkit::trace::{generate_synthetic, Dataset, SyntheticConfig};

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn corpus() -> Dataset {
    let cfg = SyntheticConfig {
        n_classes: 20,
        n_instances: 30,
        trace_len_mean: 1500,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, 1).unwrap()
}

fn features(c: &mut Criterion) {
    let ds = corpus();
    let spec = FeatureSpec::Resp { dim: 1000 };
    let mut g = c.benchmark_group("extract_all");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| spec.extract_all(black_box(&ds.records), mode).unwrap())
        });
    }
    g.finish();
}

fn forest(c: &mut Criterion) {
    let ds = corpus();
    let x = FeatureSpec::CellDirection { dim: 500 }.extract_all(&ds.records, ExecMode::Parallel).unwrap();
    let y = ds.labels();
    let cfg = ForestConfig {
        n_trees: 32,
        ..ForestConfig::default()
    };
    let mut g = c.benchmark_group("train_forest");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| train_forest(black_box(&x), &y, &cfg, 7, mode).unwrap())
        });
    }
    g.finish();
}

fn defense(c: &mut Criterion) {
    let ds = corpus();
    let params = DefenseParams::tamaraw_default();
    let mut g = c.benchmark_group("defend_dataset");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| defend_dataset(black_box(&ds), &params, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, features, forest, defense);
criterion_main!(benches);
