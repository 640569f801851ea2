//! Fingerprintability prediction: rank-transformed HTML features, binary
//! labels from per-site attack accuracy, an MLP, and class-weighted scoring.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{balanced_weights, fp_labels, rank_transform, HtmlFeatureRow, FEATURE_NAMES};
use crate::classic::{gini_importance, train_forest, ForestConfig};
use crate::error::{Error, Result};
use crate::eval::{weighted_metrics, MeanStd};
use crate::nn::{build_mlp, to_matrix, train_classifier, MlpConfig, TrainConfig};
use crate::par::{self, ExecMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FpConfig {
    pub threshold: f64,
    pub ratio: f64,
    pub n_iters: usize,
    pub seed: u64,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    /// Replicate minority-class training rows until both classes match.
    pub oversample: bool,
    /// Trees for the Gini feature ranking; 0 skips it.
    pub importance_trees: usize,
}

impl Default for FpConfig {
    fn default() -> Self {
        FpConfig {
            threshold: 0.5,
            ratio: 0.8,
            n_iters: 10,
            seed: 0,
            mlp: MlpConfig {
                hidden_units: [64, 64],
                ..Default::default()
            },
            train: TrainConfig::mlp(),
            oversample: true,
            importance_trees: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpIteration {
    pub weighted_accuracy: f64,
    pub weighted_mse: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpReport {
    pub threshold: f64,
    /// Instances labelled `[unfingerprintable, fingerprintable]`.
    pub class_counts: [usize; 2],
    pub class_weights: [f64; 2],
    pub iterations: Vec<FpIteration>,
    pub weighted_accuracy: MeanStd,
    pub weighted_mse: MeanStd,
    /// `(feature name, normalized Gini importance)`, most important first.
    pub top_features: Vec<(String, f64)>,
}

fn stratified_split(labels: &[usize], ratio: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let k = (ratio * idx.len() as f64).round() as usize;
        let k = if idx.len() >= 2 { k.clamp(1, idx.len() - 1) } else { idx.len() };
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn oversample(train: &[usize], labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let by: [Vec<usize>; 2] = [0, 1].map(|c| train.iter().copied().filter(|&i| labels[i] == c).collect());
    let target = by[0].len().max(by[1].len());
    let mut out = Vec::with_capacity(2 * target);
    for group in &by {
        if group.is_empty() {
            continue;
        }
        for k in 0..target {
            out.push(group[k % group.len()]);
        }
    }
    out.shuffle(rng);
    out
}

/// Ranks per column over the whole corpus, scaled to `[0, 1]`.
pub fn normalized_ranks(rows: &[HtmlFeatureRow]) -> Result<Vec<Vec<f64>>> {
    let m: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    let ranks = rank_transform(&m)?;
    let scale = (rows.len().max(2) - 1) as f64;
    Ok(ranks
        .into_iter()
        .map(|r| r.into_iter().map(|v| (v - 1.0) / scale).collect())
        .collect())
}

pub fn run_fp_experiment(
    rows: &[HtmlFeatureRow],
    site_accuracy: &BTreeMap<String, f64>,
    cfg: &FpConfig,
    mode: ExecMode,
) -> Result<FpReport> {
    if rows.len() < 4 {
        return Err(Error::invalid("fingerprintability experiment needs at least 4 instances"));
    }
    if !(cfg.ratio > 0.0 && cfg.ratio < 1.0) || cfg.n_iters == 0 {
        return Err(Error::invalid("ratio must lie in (0, 1) and n_iters be positive"));
    }
    let x = normalized_ranks(rows)?;
    let sites: Vec<String> = rows.iter().map(|r| r.site.clone()).collect();
    let labeling = fp_labels(site_accuracy, &sites, cfg.threshold)?;
    let labels = &labeling.labels;

    let iterations = par::try_map_indexed(mode, cfg.n_iters, |it| -> Result<FpIteration> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(it as u64 + 1);
        let (train, test) = stratified_split(labels, cfg.ratio, &mut rng);
        if test.is_empty() {
            return Err(Error::invalid("split left no test instances"));
        }
        let fit = if cfg.oversample { oversample(&train, labels, &mut rng) } else { train.clone() };
        let xtr: Vec<Vec<f64>> = fit.iter().map(|&i| x[i].clone()).collect();
        let ytr: Vec<usize> = fit.iter().map(|&i| labels[i]).collect();
        let seed = cfg.seed.wrapping_add(it as u64);
        let model = build_mlp(x[0].len(), 2, &cfg.mlp, seed)?;
        let mut tcfg = cfg.train.clone().with_seed(seed);
        tcfg.batch_size = tcfg.batch_size.min(xtr.len());
        let trained = train_classifier(model, &to_matrix(&xtr)?, &ytr, &tcfg)?;
        let xte: Vec<Vec<f64>> = test.iter().map(|&i| x[i].clone()).collect();
        let probs = trained.model.predict_proba_batch(to_matrix(&xte)?.view())?;
        let p1: Vec<f64> = probs.column(1).to_vec();
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let (weighted_accuracy, weighted_mse) = weighted_metrics(&p1, &yte, &balanced_weights(&train_labels))?;
        Ok(FpIteration {
            weighted_accuracy,
            weighted_mse,
            n_test: test.len(),
        })
    })?;

    let top_features = if cfg.importance_trees > 0 && labeling.counts().iter().all(|&c| c > 0) {
        let forest = train_forest(
            &x,
            labels,
            &ForestConfig {
                n_trees: cfg.importance_trees,
                ..Default::default()
            },
            cfg.seed,
            mode,
        )?;
        let imp = gini_importance(&forest);
        let mut named: Vec<(String, f64)> = FEATURE_NAMES.iter().map(|s| s.to_string()).zip(imp).collect();
        named.sort_by(|a, b| b.1.total_cmp(&a.1));
        named.truncate(15);
        named
    } else {
        Vec::new()
    };

    Ok(FpReport {
        threshold: cfg.threshold,
        class_counts: labeling.counts(),
        class_weights: labeling.class_weights,
        weighted_accuracy: MeanStd::of(iterations.iter().map(|i| i.weighted_accuracy)).expect("n_iters > 0"),
        weighted_mse: MeanStd::of(iterations.iter().map(|i| i.weighted_mse)).expect("n_iters > 0"),
        iterations,
        top_features,
    })
}
