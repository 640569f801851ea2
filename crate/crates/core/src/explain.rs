//! Layer-wise relevance propagation with the w²-rule for dense networks.
//!
//! Relevance starts at the pre-softmax score of the target class and flows
//! backwards; each unit `j` hands `w_ij² / Σ_i' w_i'j² · R_j` to input `i`.
//! Biases take no part. A unit whose incoming weights are all zero keeps its
//! relevance, which is then dropped from the total.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{FeatureVector, Pipeline};
use crate::nn::{Layer, NeuralModel};

#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    pub scores: Vec<f64>,
    pub target: usize,
    /// Total relevance present at each depth, output first, input last.
    pub layer_totals: Vec<f64>,
}

impl RelevanceVector {
    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

/// One w²-rule step through a weight matrix `w` (`inputs × units`).
/// Returns the input relevances and how much relevance was dropped on units
/// with no incoming weight.
pub fn redistribute_w2(w: &Array2<f64>, upper: &[f64]) -> (Vec<f64>, f64) {
    let mut lower = vec![0.0; w.nrows()];
    let mut dropped = 0.0;
    for (j, &rj) in upper.iter().enumerate() {
        if rj == 0.0 {
            continue;
        }
        let col = w.column(j);
        let denom: f64 = col.iter().map(|v| v * v).sum();
        if denom == 0.0 {
            dropped += rj;
            continue;
        }
        for (i, wij) in col.iter().enumerate() {
            lower[i] += wij * wij / denom * rj;
        }
    }
    (lower, dropped)
}

/// Propagate the target class's output score back to the input features.
pub fn lrp_w2(model: &NeuralModel, input: &[f64], target: usize) -> Result<RelevanceVector> {
    if model.has_conv() {
        return Err(Error::Unsupported(
            "relevance propagation supports dense-only models".into(),
        ));
    }
    let scores = model.output_scores(input)?;
    if target >= scores.len() {
        return Err(Error::invalid(format!(
            "target class {target} out of range for {} outputs",
            scores.len()
        )));
    }
    let mut relevance = vec![0.0; scores.len()];
    relevance[target] = scores[target];
    let mut totals = vec![scores[target]];
    let mut dropped_total = 0.0;
    for layer in model.layers().iter().rev() {
        if let Layer::Dense(d) = layer {
            let (lower, dropped) = redistribute_w2(&d.w, &relevance);
            if dropped != 0.0 {
                dropped_total += dropped;
            }
            relevance = lower;
            totals.push(relevance.iter().sum());
        }
    }
    if dropped_total != 0.0 {
        log::warn!("relevance {dropped_total} dropped at units with all-zero incoming weights");
    }
    Ok(RelevanceVector {
        scores: relevance,
        target,
        layer_totals: totals,
    })
}

/// Explain the model's own argmax prediction.
pub fn lrp_w2_predicted(model: &NeuralModel, input: &[f64]) -> Result<RelevanceVector> {
    let scores = model.output_scores(input)?;
    let target = argmax(&scores);
    lrp_w2(model, input, target)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregatedRelevance {
    pub summed: Vec<f64>,
    /// Feature indices by descending summed score (ties by index).
    pub ranking: Vec<usize>,
}

pub fn aggregate_relevance(runs: &[RelevanceVector]) -> Result<AggregatedRelevance> {
    let dim = runs
        .first()
        .map(|r| r.scores.len())
        .ok_or_else(|| Error::invalid("no relevance runs to aggregate"))?;
    let mut summed = vec![0.0; dim];
    for (k, r) in runs.iter().enumerate() {
        if r.scores.len() != dim {
            return Err(Error::shape(format!("run {k} has {} scores, expected {dim}", r.scores.len())));
        }
        for (s, v) in summed.iter_mut().zip(&r.scores) {
            *s += v;
        }
    }
    let mut ranking: Vec<usize> = (0..dim).collect();
    ranking.sort_by(|&a, &b| summed[b].total_cmp(&summed[a]).then(a.cmp(&b)));
    Ok(AggregatedRelevance { summed, ranking })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    /// Feature value of the group: -1 incoming, 0 padding, +1 outgoing.
    pub value: i8,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub indices: Vec<usize>,
}

/// Partition relevance scores by the direction value at each position.
/// Groups with no members are omitted.
pub fn relevance_by_direction(relevance: &RelevanceVector, features: &FeatureVector) -> Result<Vec<GroupStats>> {
    if !matches!(features.pipeline(), Pipeline::CellDirection | Pipeline::TlsDirection) {
        return Err(Error::invalid(format!(
            "direction grouping needs direction features, got {:?}",
            features.pipeline()
        )));
    }
    if features.dim() != relevance.scores.len() {
        return Err(Error::shape(format!(
            "{} features vs {} relevance scores",
            features.dim(),
            relevance.scores.len()
        )));
    }
    let mut out = Vec::new();
    for value in [-1i8, 0, 1] {
        let indices: Vec<usize> = features
            .values()
            .iter()
            .enumerate()
            .filter(|(_, v)| **v == value as f64)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let n = indices.len() as f64;
        let mean = indices.iter().map(|&i| relevance.scores[i]).sum::<f64>() / n;
        let var = indices.iter().map(|&i| (relevance.scores[i] - mean).powi(2)).sum::<f64>() / n;
        out.push(GroupStats {
            value,
            count: indices.len(),
            mean,
            std: var.sqrt(),
            indices,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_mlp, Activation, LayerSpec, Loss, MlpConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn single_layer_three_four() {
        let w = array![[3.0], [4.0]];
        let (r, dropped) = redistribute_w2(&w, &[1.0]);
        assert_abs_diff_eq!(r[0], 0.36, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 0.64, epsilon = 1e-15);
        assert_eq!(dropped, 0.0);
    }

    #[test]
    fn two_layer_hand_evaluation() {
        // inputs(2) -> hidden(2) -> out(2), weights given as inputs × units
        let w1 = array![[1.0, 2.0], [3.0, 0.0]];
        let w2 = array![[1.0, 1.0], [2.0, -1.0]];
        // start with R = [0, 5] at the output
        // layer 2, unit 1: column [1,-1] -> squares [1,1] / 2 -> hidden [2.5, 2.5]
        // layer 1: unit 0 column [1,3] -> [0.1, 0.9]·2.5 = [0.25, 2.25]
        //          unit 1 column [2,0] -> [1, 0]·2.5 = [2.5, 0]
        let (h, _) = redistribute_w2(&w2, &[0.0, 5.0]);
        assert_eq!(h, vec![2.5, 2.5]);
        let (x, _) = redistribute_w2(&w1, &h);
        assert_abs_diff_eq!(x[0], 2.75, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.25, epsilon = 1e-12);
    }

    #[test]
    fn zero_weight_unit_redistributes_nothing() {
        let w = array![[0.0, 1.0], [0.0, 2.0]];
        let (r, dropped) = redistribute_w2(&w, &[3.0, 5.0]);
        assert_eq!(dropped, 3.0);
        assert_abs_diff_eq!(r.iter().sum::<f64>(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn scaling_a_layer_leaves_fractions_unchanged() {
        let w = array![[0.3, -1.2], [2.0, 0.1], [-0.7, 0.4]];
        let (a, _) = redistribute_w2(&w, &[1.0, -2.0]);
        let (b, _) = redistribute_w2(&(&w * -3.5), &[1.0, -2.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn conservation_through_mlp() {
        for seed in 0..10 {
            let m = build_mlp(12, 4, &MlpConfig { hidden_units: [9, 7], ..Default::default() }, seed).unwrap();
            let input: Vec<f64> = (0..12).map(|i| ((i * 5 + seed as usize) % 3) as f64 - 1.0).collect();
            let r = lrp_w2_predicted(&m, &input).unwrap();
            for t in &r.layer_totals {
                assert_abs_diff_eq!(*t, r.layer_totals[0], epsilon = 1e-6);
            }
            assert_abs_diff_eq!(r.total(), m.output_scores(&input).unwrap()[r.target], epsilon = 1e-6);
        }
    }

    #[test]
    fn conv_models_rejected() {
        let m = crate::nn::build_cnn(10, 2, &Default::default(), 0).unwrap();
        assert!(matches!(lrp_w2(&m, &[0.0; 10], 0), Err(Error::Unsupported(_))));
        let lin = NeuralModel::from_specs(
            2,
            &[LayerSpec::Dense { units: 2, activation: Activation::Tanh, l2: 0.0 }, LayerSpec::SoftmaxOutput { units: 2, l2: 0.0 }],
            Loss::CategoricalCrossEntropy,
            0,
        )
        .unwrap();
        assert!(lrp_w2(&lin, &[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn aggregation() {
        let r = |s: Vec<f64>| RelevanceVector { scores: s, target: 0, layer_totals: vec![] };
        let one = aggregate_relevance(&[r(vec![0.5, 0.25])]).unwrap();
        assert_eq!(one.summed, vec![0.5, 0.25]);
        assert_eq!(one.ranking, vec![0, 1]);
        let zeros: Vec<_> = (0..10).map(|_| r(vec![0.0; 4])).collect();
        assert_eq!(aggregate_relevance(&zeros).unwrap().summed, vec![0.0; 4]);
        assert!(aggregate_relevance(&[r(vec![1.0]), r(vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn direction_groups_partition() {
        let f = FeatureVector::new(vec![1.0, -1.0, -1.0, 0.0, 1.0, 0.0], Pipeline::CellDirection);
        let r = RelevanceVector { scores: vec![0.1, 0.2, 0.3, 0.0, 0.5, 0.0], target: 0, layer_totals: vec![] };
        let g = relevance_by_direction(&r, &f).unwrap();
        let mut all: Vec<usize> = g.iter().flat_map(|x| x.indices.clone()).collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        let counts: Vec<(i8, usize)> = g.iter().map(|x| (x.value, x.count)).collect();
        assert_eq!(counts, vec![(-1, 2), (0, 2), (1, 2)]);

        let pad = FeatureVector::new(vec![0.0; 4], Pipeline::CellDirection);
        let r0 = RelevanceVector { scores: vec![0.0; 4], target: 0, layer_totals: vec![] };
        assert_eq!(relevance_by_direction(&r0, &pad).unwrap().len(), 1);

        let resp = FeatureVector::new(vec![1.0; 4], Pipeline::Resp);
        assert!(relevance_by_direction(&r0, &resp).is_err());
    }
}
