use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{apply_policy, bdr, outcome, decide_with_confidence, site_accuracy, Confusion, Outcome, Policy};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::nn::{build_cnn, build_mlp, to_matrix, train_classifier, CnnConfig, MlpConfig, TrainConfig};
use crate::par::{self, ExecMode};
use crate::trace::{split_iterations, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Mlp(MlpConfig),
    Cnn(CnnConfig),
}

/// Multiclass keeps one output per site (plus background); binary collapses
/// the labels to monitored vs. background.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Multiclass,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: FeatureSpec,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub ratio: f64,
    pub n_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub task: Task,
    /// Confidence thresholds to re-score each iteration's predictions at.
    #[serde(default)]
    pub sweep: Vec<f64>,
    /// z-score features with training-split statistics.
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub confusion: Confusion,
    pub accuracy: f64,
    pub tpr: Option<f64>,
    /// `None` in a closed world.
    pub fpr: Option<f64>,
    pub bdr: Option<f64>,
    pub wmacc: Option<f64>,
    pub per_class_accuracy: BTreeMap<String, f64>,
}

impl MetricsReport {
    /// `correct` counts test samples whose decision equals the true label
    /// (background samples count when rejected).
    pub fn new(confusion: Confusion, correct: usize, per_class: BTreeMap<String, f64>, prior: Option<(usize, usize)>) -> Self {
        let tpr = confusion.tpr();
        let fpr = confusion.fpr();
        let bdr = match (tpr, fpr, prior) {
            (Some(t), Some(f), Some((m, b))) => bdr(t, f, m, b).ok(),
            _ => None,
        };
        MetricsReport {
            accuracy: correct as f64 / confusion.total().max(1) as f64,
            tpr,
            fpr,
            bdr,
            wmacc: tpr,
            per_class_accuracy: per_class,
            confusion,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Iterations where the metric was defined.
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(MeanStd { mean, std, n: v.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MeanStd,
    pub tpr: Option<MeanStd>,
    pub fpr: Option<MeanStd>,
    pub bdr: Option<MeanStd>,
    pub wmacc: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub bdr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub open_world: bool,
    pub task: Task,
    pub iterations: Vec<MetricsReport>,
    pub aggregate: Aggregate,
    /// Pooled over iterations; one row per configured threshold.
    pub sweep: Vec<SweepRow>,
    /// Fraction of each site's test instances that were true positives,
    /// pooled over iterations.
    pub site_accuracy: BTreeMap<String, f64>,
}

impl ExperimentReport {
    /// Aligned plain-text summary.
    pub fn render_table(&self) -> String {
        let fmt = |m: &Option<MeanStd>| m.map_or("N/A".to_string(), |m| format!("{:.4} ± {:.4}", m.mean, m.std));
        let a = &self.aggregate;
        let mut s = format!(
            "{:<10} {}\n{:<10} {}\n",
            "world",
            if self.open_world { "open" } else { "closed" },
            "iters",
            self.iterations.len()
        );
        for (name, v) in [
            ("accuracy", fmt(&Some(a.accuracy))),
            ("tpr", fmt(&a.tpr)),
            ("fpr", fmt(&a.fpr)),
            ("bdr", fmt(&a.bdr)),
            ("wmacc", fmt(&a.wmacc)),
        ] {
            s.push_str(&format!("{name:<10} {v}\n"));
        }
        s
    }
}

/// Per-test-sample record kept for re-scoring.
struct Scored {
    label: usize,
    probs: Vec<f64>,
}

fn iteration_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + i as u64);
    rng.random()
}

fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let Some(d) = train.first().map(Vec::len) else { return };
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let sd = (train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for r in train.iter_mut().chain(test.iter_mut()) {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

/// Extract features, then for every split iteration train a fresh model,
/// score the test set under the policy and collect metrics.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig, mode: ExecMode) -> Result<ExperimentReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    for t in &cfg.sweep {
        if !(0.0..1.0).contains(t) {
            return Err(Error::invalid(format!("sweep threshold {t} outside [0, 1)")));
        }
    }
    let features = cfg.features.extract_all(&dataset.records, mode)?;
    let bg_ordinal = dataset.background_ordinal();
    let open_world = bg_ordinal.is_some();
    let raw_labels = dataset.labels();
    let (labels, class_names, background): (Vec<usize>, Vec<String>, Option<usize>) = match cfg.task {
        Task::Multiclass => (raw_labels.clone(), dataset.classes().to_vec(), bg_ordinal),
        Task::Binary => {
            let bg = bg_ordinal.ok_or_else(|| Error::invalid("binary task needs background instances"))?;
            (
                raw_labels.iter().map(|&l| usize::from(l == bg)).collect(),
                vec!["monitored".into(), crate::trace::BACKGROUND.into()],
                Some(1),
            )
        }
    };
    let n_classes = class_names.len();
    if n_classes < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let prior = bg_ordinal.map(|bg| {
        let nb = raw_labels.iter().filter(|&&l| l == bg).count();
        (raw_labels.len() - nb, nb)
    });
    let plan = split_iterations(dataset, cfg.ratio, cfg.n_iters, cfg.seed)?;

    let runs = par::try_map_indexed(mode, plan.iterations.len(), |it| -> Result<Vec<Scored>> {
        let split = &plan.iterations[it];
        let mut xtr: Vec<Vec<f64>> = split.train.iter().map(|&i| features[i].clone()).collect();
        let mut xte: Vec<Vec<f64>> = split.test.iter().map(|&i| features[i].clone()).collect();
        if cfg.standardize {
            standardize(&mut xtr, &mut xte);
        }
        let ytr: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
        let seed = iteration_seed(cfg.seed, it);
        let dim = cfg.features.dim();
        let model = match &cfg.model {
            ModelKind::Mlp(m) => build_mlp(dim, n_classes, m, seed)?,
            ModelKind::Cnn(c) => build_cnn(dim, n_classes, c, seed)?,
        };
        let train_cfg = cfg.train.clone().with_seed(seed);
        let trained = train_classifier(model, &to_matrix(&xtr)?, &ytr, &train_cfg)?;
        let probs = trained.model.predict_proba_batch(to_matrix(&xte)?.view())?;
        Ok(split
            .test
            .iter()
            .zip(probs.rows())
            .map(|(&i, p)| Scored {
                label: labels[i],
                probs: p.to_vec(),
            })
            .collect())
    })?;

    let mut iterations = Vec::with_capacity(runs.len());
    let mut site_outcomes: Vec<(&str, Outcome)> = Vec::new();
    let mut sweep: Vec<Confusion> = vec![Confusion::default(); cfg.sweep.len()];
    for (it, scored) in runs.iter().enumerate() {
        let mut conf = Confusion::default();
        let mut correct = 0;
        let mut per_class = vec![(0usize, 0usize); n_classes];
        for (s, &idx) in scored.iter().zip(&plan.iterations[it].test) {
            let o = apply_policy(&s.probs, &cfg.policy, s.label, background)?;
            conf.add(o);
            let ok = matches!(o, Outcome::Tp | Outcome::Tn);
            correct += usize::from(ok);
            per_class[s.label].0 += usize::from(ok);
            per_class[s.label].1 += 1;
            site_outcomes.push((dataset.records[idx].label.as_str(), o));
            for (t, c) in cfg.sweep.iter().zip(sweep.iter_mut()) {
                c.add(outcome(s.label, decide_with_confidence(&s.probs, *t), background));
            }
        }
        let per_class = per_class
            .iter()
            .zip(&class_names)
            .filter(|((_, n), _)| *n > 0)
            .map(|((c, n), name)| (name.clone(), *c as f64 / *n as f64))
            .collect();
        iterations.push(MetricsReport::new(conf, correct, per_class, prior));
    }

    let pick = |f: fn(&MetricsReport) -> Option<f64>| MeanStd::of(iterations.iter().filter_map(f));
    let aggregate = Aggregate {
        accuracy: MeanStd::of(iterations.iter().map(|r| r.accuracy)).expect("at least one iteration"),
        tpr: pick(|r| r.tpr),
        fpr: pick(|r| r.fpr),
        bdr: pick(|r| r.bdr),
        wmacc: pick(|r| r.wmacc),
    };
    let sweep = cfg
        .sweep
        .iter()
        .zip(sweep)
        .map(|(&threshold, c)| SweepRow {
            threshold,
            tpr: c.tpr(),
            fpr: c.fpr(),
            bdr: match (c.tpr(), c.fpr(), prior) {
                (Some(t), Some(f), Some((m, b))) => bdr(t, f, m, b).ok(),
                _ => None,
            },
            confusion: c,
        })
        .collect();
    let mut site_acc = site_accuracy(site_outcomes);
    site_acc.remove(crate::trace::BACKGROUND);
    Ok(ExperimentReport {
        open_world,
        task: cfg.task,
        iterations,
        aggregate,
        sweep,
        site_accuracy: site_acc,
    })
}
