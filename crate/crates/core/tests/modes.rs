//! Sequential and parallel execution must produce identical results.

use wfkit::classic::{train_forest, ForestConfig};
use wfkit::defense::{defend_dataset, DefenseParams};
use wfkit::eval::{run_experiment, ExperimentConfig, ModelKind};
use wfkit::features::FeatureSpec;
use wfkit::nn::{MlpConfig, TrainConfig};
use wfkit::par::ExecMode;
use wfkit::trace::{generate_synthetic, Dataset, SyntheticConfig};

fn corpus() -> Dataset {
    let cfg = SyntheticConfig {
        n_classes: 5,
        n_instances: 12,
        n_background: 20,
        trace_len_mean: 150,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, 9).unwrap()
}

#[test]
fn features_agree() {
    let ds = corpus();
    for spec in [FeatureSpec::CellDirection { dim: 200 }, FeatureSpec::Resp { dim: 64 }] {
        let a = spec.extract_all(&ds.records, ExecMode::Sequential).unwrap();
        let b = spec.extract_all(&ds.records, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn forest_agrees() {
    let ds = corpus();
    let x = FeatureSpec::CellDirection { dim: 100 }.extract_all(&ds.records, ExecMode::Sequential).unwrap();
    let y = ds.labels();
    let cfg = ForestConfig {
        n_trees: 16,
        ..ForestConfig::default()
    };
    let a = train_forest(&x, &y, &cfg, 4, ExecMode::Sequential).unwrap();
    let b = train_forest(&x, &y, &cfg, 4, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.predict_batch(&x, ExecMode::Sequential), b.predict_batch(&x, ExecMode::Parallel));
}

#[test]
fn defenses_agree() {
    let ds = corpus();
    for params in [DefenseParams::buflo_default(), DefenseParams::tamaraw_default()] {
        let a = defend_dataset(&ds, &params, ExecMode::Sequential).unwrap();
        let b = defend_dataset(&ds, &params, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn experiment_agrees() {
    let ds = corpus();
    let cfg = ExperimentConfig {
        features: FeatureSpec::CellDirection { dim: 100 },
        model: ModelKind::Mlp(MlpConfig {
            hidden_units: [16, 16],
            ..MlpConfig::default()
        }),
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::mlp()
        },
        ratio: 0.8,
        n_iters: 3,
        seed: 5,
        policy: Default::default(),
        task: Default::default(),
        sweep: vec![0.5, 0.9],
        standardize: false,
    };
    let a = run_experiment(&ds, &cfg, ExecMode::Sequential).unwrap();
    let b = run_experiment(&ds, &cfg, ExecMode::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iterations.len(), 3);
}
