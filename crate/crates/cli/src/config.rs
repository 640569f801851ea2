//! Declarative run configuration (TOML) shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wfkit::defense::DefenseParams;
use wfkit::eval::{ModelKind, Policy, Task};
use wfkit::features::FeatureSpec;
use wfkit::nn::{AeConfig, MlpConfig, TrainConfig};
use wfkit::trace::SyntheticConfig;
use wfkit::tune::{NamedDimension, Strategy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encode: Option<EncodeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lrp: Option<LrpSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defense: Option<DefenseParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub html: Option<HtmlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fp: Option<FpSection>,
}

/// Either a JSONL trace file or, when absent, the `[synthetic]` generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub ratio: f64,
    pub n_iters: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { ratio: 0.9, n_iters: 20 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub task: Task,
    pub sweep: Vec<f64>,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub budget: usize,
    pub strategy: Strategy,
    /// Split iterations averaged per trial.
    pub n_iters: usize,
    /// Defaults to the MLP space when empty.
    pub space: Vec<NamedDimension>,
    /// Earlier `trials.jsonl` to continue from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            budget: 30,
            strategy: Strategy::Tpe,
            n_iters: 1,
            space: Vec::new(),
            resume: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeSection {
    pub ae: AeConfig,
    /// Use a trained autoencoder instead of fitting one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpTarget {
    #[default]
    Predicted,
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrpSection {
    pub model: PathBuf,
    #[serde(default)]
    pub target: LrpTarget,
    /// Explain only the first `limit` instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtmlSection {
    pub dir: PathBuf,
    pub meta: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpSection {
    /// Feature CSV written by `htmlfeat`; falls back to `[html]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// `site,accuracy` CSV, e.g. the one written by `eval`.
    pub site_accuracy: PathBuf,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_fp_ratio")]
    pub ratio: f64,
    #[serde(default = "default_fp_iters")]
    pub n_iters: usize,
    #[serde(default = "default_fp_mlp")]
    pub mlp: MlpConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "yes")]
    pub oversample: bool,
    #[serde(default = "default_importance_trees")]
    pub importance_trees: usize,
}

fn default_thresholds() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

fn default_fp_ratio() -> f64 {
    0.8
}

fn default_fp_iters() -> usize {
    10
}

fn default_fp_mlp() -> MlpConfig {
    wfkit::html::FpConfig::default().mlp
}

fn yes() -> bool {
    true
}

fn default_importance_trees() -> usize {
    50
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Make relative input paths relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.dataset {
            fix(&mut d.path);
        }
        if let Some(p) = self.tune.as_mut().and_then(|t| t.resume.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.encode.as_mut().and_then(|e| e.model.as_mut()) {
            fix(p);
        }
        if let Some(l) = &mut self.lrp {
            fix(&mut l.model);
        }
        if let Some(h) = &mut self.html {
            fix(&mut h.dir);
            fix(&mut h.meta);
        }
        if let Some(f) = &mut self.fp {
            if let Some(p) = &mut f.features {
                fix(p);
            }
            fix(&mut f.site_accuracy);
        }
    }

    pub fn features(&self) -> Result<FeatureSpec> {
        let f = self.features.context("missing [features] section")?;
        if f.dim() == 0 {
            bail!("features.dim: must be at least 1");
        }
        Ok(f)
    }

    pub fn model(&self) -> Result<ModelKind> {
        self.model.clone().context("missing [model] section")
    }

    pub fn split(&self) -> Result<SplitSection> {
        let s = self.split.clone().unwrap_or_default();
        if !(s.ratio > 0.0 && s.ratio < 1.0) {
            bail!("split.ratio: must lie in (0, 1), got {}", s.ratio);
        }
        if s.n_iters == 0 {
            bail!("split.n_iters: must be at least 1");
        }
        Ok(s)
    }

    /// Training settings, falling back to the model kind's defaults.
    pub fn train_for(&self, model: &ModelKind) -> Result<TrainConfig> {
        let t = self.train.clone().unwrap_or_else(|| match model {
            ModelKind::Mlp(_) => TrainConfig::mlp(),
            ModelKind::Cnn(_) => TrainConfig::cnn(),
        });
        check_train(&t)?;
        Ok(t)
    }

    pub fn policy(&self) -> Result<Policy> {
        let p = self.policy.unwrap_or_default();
        match p {
            Policy::Threshold { threshold } if !(0.0..1.0).contains(&threshold) => {
                bail!("policy.threshold: must lie in [0, 1), got {threshold}")
            }
            Policy::TopK { k: 0 } => bail!("policy.k: must be at least 1"),
            _ => Ok(p),
        }
    }
}

pub fn check_train(t: &TrainConfig) -> Result<()> {
    if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
        bail!("train.learning_rate: must be positive, got {}", t.learning_rate);
    }
    if t.epochs == 0 {
        bail!("train.epochs: must be at least 1");
    }
    if t.batch_size == 0 {
        bail!("train.batch_size: must be at least 1");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
seed = 3

[synthetic]
n_classes = 5
n_instances = 12

[features]
kind = "cell_direction"
dim = 300

[model]
kind = "cnn"
n_filters = 8

[policy]
kind = "top_k"
k = 3

[defense]
kind = "tamaraw"
packet_size = 512
interval_out = 0.04
interval_in = 0.012
pad_multiple = 100

[tune]
budget = 5
space = [{ name = "learning_rate", type = "continuous", lo = 0.001, hi = 0.1, log = true }]
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let again: RunConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.synthetic.as_ref().unwrap().n_instances, 12);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = toml::from_str::<RunConfig>("[split]\nratoi = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("ratoi"), "{err}");
    }
}
