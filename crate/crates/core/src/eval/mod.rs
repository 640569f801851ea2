//! Open- and closed-world evaluation: decision policies, confusion
//! accounting, TPR/FPR/BDR/WMacc, class-weighted metrics and the split-loop
//! experiment driver.

mod experiment;
mod metrics;

pub use experiment::{
    run_experiment, Aggregate, ExperimentConfig, ExperimentReport, MeanStd, MetricsReport, ModelKind, SweepRow, Task,
};
pub use metrics::{
    apply_policy, argmax, bdr, decide_with_confidence, outcome, site_accuracy, topk_outcome, weighted_metrics, wmacc,
    Confusion, Outcome, Policy,
};
