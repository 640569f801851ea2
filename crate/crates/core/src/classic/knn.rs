use serde::Serialize;

use super::{check_matrix, DecisionForest};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Added to distances before inversion so exact matches get a finite weight.
pub const KNN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnnPrediction {
    pub label: usize,
    /// Winning class's share of the total vote weight.
    pub score: f64,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices of the `k` smallest distances, ties broken by index.
fn nearest(dists: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Inverse-distance-weighted k-NN vote. The class with the highest summed
/// weight `1/(d+ε)` wins; ties go to the lowest label.
pub fn knn_classify(train_x: &[Vec<f64>], train_y: &[usize], query: &[f64], k: usize) -> Result<KnnPrediction> {
    let d = check_matrix(train_x, train_y)?;
    if query.len() != d {
        return Err(Error::shape(format!("query has {} features, expected {d}", query.len())));
    }
    if k == 0 || k > train_x.len() {
        return Err(Error::invalid(format!("k={k} must lie in 1..={}", train_x.len())));
    }
    let dists: Vec<f64> = train_x.iter().map(|r| euclidean(r, query)).collect();
    let n_classes = train_y.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0.0; n_classes];
    for i in nearest(&dists, k) {
        votes[train_y[i]] += 1.0 / (dists[i] + KNN_EPS);
    }
    let label = super::argmax(&votes);
    Ok(KnnPrediction {
        label,
        score: votes[label] / votes.iter().sum::<f64>(),
    })
}

pub fn knn_predict_batch(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    queries: &[Vec<f64>],
    k: usize,
    mode: ExecMode,
) -> Result<Vec<usize>> {
    par::try_map_indexed(mode, queries.len(), |i| knn_classify(train_x, train_y, &queries[i], k).map(|p| p.label))
}

pub fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// k-FP matcher: a forest plus the leaf vectors of its training points.
#[derive(Debug, Clone, PartialEq)]
pub struct KfpIndex<'a> {
    pub forest: &'a DecisionForest,
    pub leaves: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl<'a> KfpIndex<'a> {
    pub fn new(forest: &'a DecisionForest, train_x: &[Vec<f64>], train_y: &[usize]) -> Result<Self> {
        check_matrix(train_x, train_y)?;
        Ok(KfpIndex {
            forest,
            leaves: train_x.iter().map(|r| forest.leaf_vector(r)).collect(),
            labels: train_y.to_vec(),
        })
    }

    pub fn classify(&self, query: &[f64], k: usize) -> Result<usize> {
        kfp_classify(self.forest, &self.leaves, &self.labels, query, k)
    }
}

/// Majority label among the `k` training leaf vectors nearest in Hamming
/// distance; ties go to the smaller summed distance, then the lowest label.
pub fn kfp_classify(forest: &DecisionForest, train_leaves: &[Vec<usize>], train_y: &[usize], query: &[f64], k: usize) -> Result<usize> {
    if train_leaves.len() != train_y.len() {
        return Err(Error::shape(format!("{} leaf vectors vs {} labels", train_leaves.len(), train_y.len())));
    }
    if k == 0 || k > train_leaves.len() {
        return Err(Error::invalid(format!("k={k} must lie in 1..={}", train_leaves.len())));
    }
    if query.len() != forest.n_features {
        return Err(Error::shape(format!("query has {} features, forest expects {}", query.len(), forest.n_features)));
    }
    let q = forest.leaf_vector(query);
    let dists: Vec<f64> = train_leaves.iter().map(|l| hamming(l, &q) as f64).collect();
    let n_classes = train_y.iter().max().map_or(0, |m| m + 1);
    let mut count = vec![0usize; n_classes];
    let mut summed = vec![0.0; n_classes];
    for i in nearest(&dists, k) {
        count[train_y[i]] += 1;
        summed[train_y[i]] += dists[i];
    }
    let mut best = 0;
    for c in 1..n_classes {
        if count[c] > count[best] || (count[c] == count[best] && summed[c] < summed[best]) {
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_wins_at_k1() {
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]];
        let y = vec![0, 1, 2];
        for (r, l) in x.iter().zip(&y) {
            assert_eq!(knn_classify(&x, &y, r, 1).unwrap().label, *l);
        }
    }

    #[test]
    fn nearer_class_wins_with_all_points() {
        let x = vec![vec![-1.0], vec![-1.2], vec![1.0], vec![1.2]];
        let y = vec![0, 0, 1, 1];
        assert_eq!(knn_classify(&x, &y, &[0.3], 4).unwrap().label, 1);
        assert_eq!(knn_classify(&x, &y, &[-0.3], 4).unwrap().label, 0);
    }

    #[test]
    fn bad_k_rejected() {
        let x = vec![vec![0.0]];
        assert!(knn_classify(&x, &[0], &[0.0], 2).is_err());
        assert!(knn_classify(&x, &[0], &[0.0], 0).is_err());
    }
}
