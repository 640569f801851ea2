//! HTML documents: parsing, the 65-feature extraction, rank transform and
//! fingerprintability labelling.

mod dom;
mod features;
mod fp;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dom::{parse_html, parse_str, DomNode, DomTree, NodeKind};
pub use features::{
    depth_transitions, extract_html_features, file_extension, link_host, percentile_nearest_rank, registrable_domain,
    HtmlFeatureRow, HtmlMeta, FEATURE_NAMES, N_HTML_FEATURES,
};
pub use fp::{normalized_ranks, run_fp_experiment, FpConfig, FpIteration, FpReport};

use crate::error::{Error, Result};
use crate::par::{self, ExecMode};

/// Per-column ascending ranks starting at 1; tied values share the lowest
/// rank of their group.
pub fn rank_transform(matrix: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = matrix.first() else {
        return Err(Error::invalid("rank transform needs at least one row"));
    };
    let d = first.len();
    if let Some(i) = matrix.iter().position(|r| r.len() != d) {
        return Err(Error::shape(format!("row {i} has {} columns, expected {d}", matrix[i].len())));
    }
    let n = matrix.len();
    let mut out = vec![vec![0.0; d]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..d {
        order.sort_by(|&a, &b| matrix[a][j].total_cmp(&matrix[b][j]));
        let mut rank = 1;
        for k in 0..n {
            if k > 0 && matrix[order[k]][j] != matrix[order[k - 1]][j] {
                rank = k + 1;
            }
            out[order[k]][j] = rank as f64;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpLabeling {
    pub threshold: f64,
    pub labels: Vec<usize>,
    /// Balanced weights `[w0, w1]`; an absent class gets weight 1.
    pub class_weights: [f64; 2],
}

impl FpLabeling {
    pub fn counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        [self.labels.len() - ones, ones]
    }

    pub fn instance_weights(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| self.class_weights[l]).collect()
    }
}

/// Balanced class weights `N/(K·n_c)` over the classes present.
pub fn balanced_weights(labels: &[usize]) -> [f64; 2] {
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let counts = [labels.len() - n1, n1];
    let k = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts.map(|c| if c > 0 { labels.len() as f64 / (k * c as f64) } else { 1.0 })
}

/// Label each instance 1 when its site's accuracy exceeds `threshold`.
pub fn fp_labels(site_accuracy: &BTreeMap<String, f64>, instance_sites: &[String], threshold: f64) -> Result<FpLabeling> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::invalid(format!("threshold must lie in [0, 1), got {threshold}")));
    }
    let mut labels = Vec::with_capacity(instance_sites.len());
    for s in instance_sites {
        let acc = *site_accuracy
            .get(s)
            .ok_or_else(|| Error::invalid(format!("no accuracy for site '{s}'")))?;
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::invalid(format!("accuracy {acc} of site '{s}' outside [0, 1]")));
        }
        labels.push(usize::from(acc > threshold));
    }
    Ok(FpLabeling {
        threshold,
        class_weights: balanced_weights(&labels),
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HtmlMetaRow {
    pub instance_id: String,
    pub site: String,
    #[serde(default)]
    pub capture_bytes: Option<f64>,
    #[serde(default)]
    pub html_bytes: Option<f64>,
    #[serde(default)]
    pub duration_seconds: Option<f64>,
}

/// Read `<dir>/<instance_id>.html` for every metadata row and extract the
/// 65 features. The site column doubles as the page host.
pub fn extract_corpus(dir: &Path, meta_csv: &Path, mode: ExecMode) -> Result<Vec<HtmlFeatureRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(meta_csv)?;
    let rows: Vec<HtmlMetaRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    par::try_map_indexed(mode, rows.len(), |i| {
        let r = &rows[i];
        let bytes = std::fs::read(dir.join(format!("{}.html", r.instance_id)))?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Encoding(e.valid_up_to()))?;
        let dom = parse_str(text);
        let meta = HtmlMeta {
            capture_bytes: r.capture_bytes,
            html_bytes: r.html_bytes,
            duration_seconds: r.duration_seconds,
        };
        Ok(HtmlFeatureRow {
            values: extract_html_features(&dom, text.chars().count(), &meta, Some(&r.site)),
            site: r.site.clone(),
            instance_id: r.instance_id.clone(),
        })
    })
}
