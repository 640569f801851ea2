use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_matrix;
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

pub const FOREST_FORMAT: &str = "wfkit-forest";
pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows every tree to purity.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Impurity decrease weighted by the fraction of the tree's samples
        /// that reach this node.
        gain: f64,
    },
    Leaf {
        leaf_id: usize,
        histogram: Vec<u32>,
    },
}

/// Binary tree stored as a node arena; node 0 is the root. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub n_leaves: usize,
}

impl DecisionTree {
    fn leaf_node(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    pub fn leaf_id(&self, x: &[f64]) -> usize {
        match self.leaf_node(x) {
            Node::Leaf { leaf_id, .. } => *leaf_id,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Majority class of the leaf reached by `x` (lowest ordinal on ties).
    pub fn predict(&self, x: &[f64]) -> usize {
        match self.leaf_node(x) {
            Node::Leaf { histogram, .. } => majority(histogram),
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

fn majority(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionForest {
    pub trees: Vec<DecisionTree>,
    pub n_classes: usize,
    pub n_features: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
    /// Out-of-bag accuracy over samples left out of at least one bootstrap.
    pub oob_accuracy: Option<f64>,
}

impl DecisionForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn votes(&self, x: &[f64]) -> Vec<u32> {
        let mut votes = vec![0u32; self.n_classes];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        votes
    }

    /// Majority over per-tree predictions; ties go to the lowest ordinal.
    pub fn predict(&self, x: &[f64]) -> usize {
        majority(&self.votes(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let n = self.trees.len() as f64;
        self.votes(x).into_iter().map(|v| v as f64 / n).collect()
    }

    pub fn predict_batch(&self, x: &[Vec<f64>], mode: ExecMode) -> Vec<usize> {
        par::map_slice(mode, x, |r| self.predict(r))
    }

    /// Leaf id reached in each tree.
    pub fn leaf_vector(&self, x: &[f64]) -> Vec<usize> {
        self.trees.iter().map(|t| t.leaf_id(x)).collect()
    }
}

fn gini(counts: &[u32], n: u32) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    n_root: f64,
    mtry: usize,
    max_depth: Option<usize>,
    min_split: usize,
    nodes: Vec<Node>,
    n_leaves: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<u32> {
        let mut c = vec![0u32; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn leaf(&mut self, histogram: Vec<u32>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            leaf_id: self.n_leaves,
            histogram,
        });
        self.n_leaves += 1;
        id
    }

    /// Best threshold on one feature, or `None` when the feature is constant.
    fn scan(&self, idx: &[usize], feature: usize, parent: &[u32], parent_gini: f64) -> Option<BestSplit> {
        let mut order: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[i][feature], self.y[i])).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = order.len() as u32;
        let mut left = vec![0u32; self.n_classes];
        let mut best: Option<BestSplit> = None;
        for k in 0..order.len() - 1 {
            left[order[k].1] += 1;
            if order[k].0 == order[k + 1].0 {
                continue;
            }
            let nl = k as u32 + 1;
            let nr = n - nl;
            let right: Vec<u32> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
            let decrease = parent_gini - child;
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                let mid = order[k].0 + (order[k + 1].0 - order[k].0) / 2.0;
                // guard against the midpoint rounding up onto the right value
                let threshold = if mid < order[k + 1].0 { mid } else { order[k].0 };
                best = Some(BestSplit {
                    feature,
                    threshold,
                    decrease,
                });
            }
        }
        best
    }

    fn build(&mut self, idx: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let counts = self.counts(idx);
        let n = idx.len() as u32;
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < self.min_split || self.max_depth.is_some_and(|m| depth >= m) {
            return self.leaf(counts);
        }
        let parent_gini = gini(&counts, n);
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        // Look at mtry features, but keep going past them until some feature
        // actually separates the samples.
        let mut best: Option<BestSplit> = None;
        for (k, &f) in features.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some(s) = self.scan(idx, f, &counts, parent_gini) {
                if best.as_ref().is_none_or(|b| s.decrease > b.decrease) {
                    best = Some(s);
                }
            }
        }
        let Some(best) = best else {
            return self.leaf(counts);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            leaf_id: usize::MAX,
            histogram: vec![],
        });
        let left = self.build(&l, depth + 1, rng);
        let right = self.build(&r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
            gain: n as f64 / self.n_root * best.decrease.max(0.0),
        };
        id
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Train a bootstrap forest of CART trees (Gini criterion, √d candidate
/// features per split). Trees get independent seeds derived from `seed`, so
/// the result does not depend on `mode`.
pub fn train_forest(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig, seed: u64, mode: ExecMode) -> Result<DecisionForest> {
    let d = check_matrix(x, y)?;
    if d == 0 {
        return Err(Error::shape("rows have no features"));
    }
    if cfg.n_trees == 0 {
        return Err(Error::invalid("n_trees must be positive"));
    }
    let n = x.len();
    let n_classes = y.iter().max().map_or(0, |m| m + 1).max(1);
    let mtry = ((d as f64).sqrt().floor() as usize).max(1);
    let grown: Vec<(DecisionTree, Vec<bool>)> = par::map_indexed(mode, cfg.n_trees, |t| {
        let mut rng = tree_rng(seed, t);
        let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![false; n];
        for &i in &sample {
            in_bag[i] = true;
        }
        let mut b = Builder {
            x,
            y,
            n_classes,
            n_root: n as f64,
            mtry,
            max_depth: cfg.max_depth,
            min_split: cfg.min_samples_split.max(2),
            nodes: Vec::new(),
            n_leaves: 0,
        };
        b.build(&sample, 0, &mut rng);
        (
            DecisionTree {
                nodes: b.nodes,
                n_leaves: b.n_leaves,
            },
            in_bag,
        )
    });

    let mut correct = 0usize;
    let mut scored = 0usize;
    for i in 0..n {
        let mut votes = vec![0u32; n_classes];
        let mut any = false;
        for (tree, in_bag) in &grown {
            if !in_bag[i] {
                votes[tree.predict(&x[i])] += 1;
                any = true;
            }
        }
        if any {
            scored += 1;
            correct += usize::from(majority(&votes) == y[i]);
        }
    }
    let oob_accuracy = (scored > 0).then(|| correct as f64 / scored as f64);
    Ok(DecisionForest {
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        n_classes,
        n_features: d,
        max_depth: cfg.max_depth,
        seed,
        oob_accuracy,
    })
}

/// Mean-decrease-in-impurity importance: per tree, sum the sample-weighted
/// impurity decrease of every split on each feature and normalize; average
/// over trees and normalize again. All zeros when no tree ever splits.
pub fn gini_importance(forest: &DecisionForest) -> Vec<f64> {
    let mut total = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        let mut per = vec![0.0; forest.n_features];
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                per[*feature] += gain;
            }
        }
        let s: f64 = per.iter().sum();
        if s > 0.0 {
            for (t, p) in total.iter_mut().zip(&per) {
                *t += p / s;
            }
        }
    }
    let s: f64 = total.iter().sum();
    if s > 0.0 {
        for t in &mut total {
            *t /= s;
        }
    }
    total
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    provenance: serde_json::Map<String, serde_json::Value>,
    forest: DecisionForest,
}

pub fn save_forest(forest: &DecisionForest, mut w: impl Write, provenance: &[(&str, serde_json::Value)]) -> Result<()> {
    let file = ForestFile {
        format: FOREST_FORMAT.into(),
        version: FOREST_VERSION,
        provenance: provenance.iter().map(|(k, v)| ((*k).to_string(), v.clone())).collect(),
        forest: forest.clone(),
    };
    serde_json::to_writer(&mut w, &file)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_forest(path: impl AsRef<Path>) -> Result<DecisionForest> {
    let file: ForestFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if file.format != FOREST_FORMAT || file.version != FOREST_VERSION {
        return Err(Error::Model(format!("unsupported forest file {} v{}", file.format, file.version)));
    }
    Ok(file.forest)
}
