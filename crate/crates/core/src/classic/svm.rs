use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::check_matrix;
use crate::error::{Error, Result};

/// One-vs-rest linear SVM over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// One weight row per class; the last entry of each row is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl LinearSvm {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        self.weights.iter().map(|w| margin(w, &z)).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        super::argmax(&self.margins(x))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| &w[..w.len() - 1])
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn margin(w: &[f64], z: &[f64]) -> f64 {
    let d = z.len();
    w[..d].iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

/// Pegasos-style hinge-loss subgradient descent per class, minimizing
/// `λ/2·‖w‖² + mean hinge` with `λ = 1/(C·n)`. Returns the averaged iterate
/// of the final epoch.
pub fn train_linear_svm(x: &[Vec<f64>], y: &[usize], c: f64, epochs: usize, seed: u64) -> Result<LinearSvm> {
    let d = check_matrix(x, y)?;
    if !(c > 0.0) {
        return Err(Error::invalid(format!("C must be positive, got {c}")));
    }
    if epochs == 0 {
        return Err(Error::invalid("epochs must be positive"));
    }
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::invalid("linear SVM needs at least two classes"));
    }
    let n = x.len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s).collect())
        .collect();
    let lambda = 1.0 / (c * n as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let mut w = vec![0.0; d + 1];
        let mut avg = vec![0.0; d + 1];
        let mut t = 0usize;
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let last = epoch + 1 == epochs;
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let target = if y[i] == class { 1.0 } else { -1.0 };
                let active = target * margin(&w, &z[i]) < 1.0;
                let shrink = 1.0 - eta * lambda;
                for v in &mut w[..d] {
                    *v *= shrink;
                }
                if active {
                    for (v, zi) in w[..d].iter_mut().zip(&z[i]) {
                        *v += eta * target * zi;
                    }
                    // bias is left out of the regularizer; damp its step
                    w[d] += eta.min(1.0) * target;
                }
                // projection onto the ball of radius 1/√λ
                let norm = w[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                let radius = 1.0 / lambda.sqrt();
                if norm > radius {
                    for v in &mut w[..d] {
                        *v *= radius / norm;
                    }
                }
                if last {
                    for (a, v) in avg.iter_mut().zip(&w) {
                        *a += v;
                    }
                }
            }
        }
        for a in &mut avg {
            *a /= n as f64;
        }
        weights.push(avg);
    }
    Ok(LinearSvm { mean, scale, weights })
}
