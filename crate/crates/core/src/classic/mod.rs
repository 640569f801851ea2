//! Classic classifiers used on autoencoder features: random forest with Gini
//! importance, k-FP leaf-vector matching, inverse-distance k-NN and a linear
//! one-vs-rest SVM.

mod forest;
mod knn;
mod svm;

pub use forest::{
    gini_importance, load_forest, save_forest, train_forest, DecisionForest, DecisionTree, ForestConfig, Node,
    FOREST_FORMAT, FOREST_VERSION,
};
pub use knn::{hamming, kfp_classify, knn_classify, knn_predict_batch, KfpIndex, KnnPrediction, KNN_EPS};
pub use svm::{train_linear_svm, LinearSvm};

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_matrix(x: &[Vec<f64>], y: &[usize]) -> crate::Result<usize> {
    if x.is_empty() {
        return Err(crate::Error::invalid("no training rows"));
    }
    if x.len() != y.len() {
        return Err(crate::Error::shape(format!("{} rows vs {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(crate::Error::shape(format!("row {i} has {} features, expected {d}", x[i].len())));
    }
    Ok(d)
}
