//! Sequential hyperparameter search: Tree-of-Parzen-Estimators with a
//! uniform-random baseline.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dimension {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    IntRange {
        lo: i64,
        hi: i64,
    },
    Categorical {
        options: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDimension {
    pub name: String,
    #[serde(flatten)]
    pub dim: Dimension,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<NamedDimension>,
}

impl SearchSpace {
    pub fn new() -> Self {
        SearchSpace::default()
    }

    pub fn continuous(mut self, name: &str, lo: f64, hi: f64, log: bool) -> Self {
        self.dims.push(NamedDimension {
            name: name.into(),
            dim: Dimension::Continuous { lo, hi, log },
        });
        self
    }

    pub fn int_range(mut self, name: &str, lo: i64, hi: i64) -> Self {
        self.dims.push(NamedDimension {
            name: name.into(),
            dim: Dimension::IntRange { lo, hi },
        });
        self
    }

    pub fn categorical(mut self, name: &str, options: &[&str]) -> Self {
        self.dims.push(NamedDimension {
            name: name.into(),
            dim: Dimension::Categorical {
                options: options.iter().map(|s| s.to_string()).collect(),
            },
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::HashSet::new();
        for d in &self.dims {
            if !names.insert(d.name.as_str()) {
                return Err(Error::invalid(format!("duplicate dimension '{}'", d.name)));
            }
            match &d.dim {
                Dimension::Continuous { lo, hi, log } => {
                    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                        return Err(Error::invalid(format!("'{}': need lo < hi", d.name)));
                    }
                    if *log && *lo <= 0.0 {
                        return Err(Error::invalid(format!("'{}': log scale needs lo > 0", d.name)));
                    }
                }
                Dimension::IntRange { lo, hi } => {
                    if lo >= hi {
                        return Err(Error::invalid(format!("'{}': need lo < hi", d.name)));
                    }
                }
                Dimension::Categorical { options } => {
                    if options.is_empty() {
                        return Err(Error::invalid(format!("'{}': no options", d.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when every dimension is present and in range.
    pub fn contains(&self, params: &Params) -> bool {
        params.len() == self.dims.len()
            && self.dims.iter().all(|d| match (&d.dim, params.get(&d.name)) {
                (Dimension::Continuous { lo, hi, .. }, Some(ParamValue::Float(v))) => v >= lo && v <= hi,
                (Dimension::IntRange { lo, hi }, Some(ParamValue::Int(v))) => v >= lo && v <= hi,
                (Dimension::Categorical { options }, Some(ParamValue::Choice(c))) => options.contains(c),
                _ => false,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Choice(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Float(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Choice(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Choice(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Choice(s) => f.write_str(s),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Params,
    /// Validation error, lower is better; `None` for failed trials.
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TpeSettings {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        TpeSettings {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Tpe,
    Random,
}

/// Size of the "good" group for `n` completed trials.
pub fn good_set_size(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64).ceil() as usize).max(1)
}

/// Working interval of a numeric dimension (log-transformed when asked).
fn numeric_bounds(dim: &Dimension) -> Option<(f64, f64, bool)> {
    match *dim {
        Dimension::Continuous { lo, hi, log } => {
            if log {
                Some((lo.ln(), hi.ln(), false))
            } else {
                Some((lo, hi, false))
            }
        }
        Dimension::IntRange { lo, hi } => Some((lo as f64 - 0.5, hi as f64 + 0.5, true)),
        Dimension::Categorical { .. } => None,
    }
}

fn to_internal(dim: &Dimension, v: &ParamValue) -> Option<f64> {
    match (dim, v) {
        (Dimension::Continuous { log: true, .. }, ParamValue::Float(x)) => Some(x.ln()),
        (Dimension::Continuous { .. }, ParamValue::Float(x)) => Some(*x),
        (Dimension::IntRange { .. }, ParamValue::Int(x)) => Some(*x as f64),
        _ => None,
    }
}

fn from_internal(dim: &Dimension, u: f64) -> ParamValue {
    match *dim {
        Dimension::Continuous { lo, hi, log } => {
            let v = if log { u.exp() } else { u };
            ParamValue::Float(v.clamp(lo, hi))
        }
        Dimension::IntRange { lo, hi } => ParamValue::Int((u.round() as i64).clamp(lo, hi)),
        Dimension::Categorical { .. } => unreachable!("numeric dimension expected"),
    }
}

/// 1-D Parzen estimator: Gaussian kernels on observations plus a flat prior
/// over the interval, each weighted equally. Each kernel's width is the
/// larger gap to its sorted neighbours (interval ends included), floored at
/// `range / min(100, n + 1)` so repeated observations cannot collapse the
/// density onto a point.
struct Parzen {
    lo: f64,
    hi: f64,
    centers: Vec<f64>,
    widths: Vec<f64>,
}

impl Parzen {
    fn fit(lo: f64, hi: f64, obs: &[f64]) -> Self {
        let range = hi - lo;
        let mut centers = obs.to_vec();
        centers.sort_by(f64::total_cmp);
        let floor = range / (centers.len() as f64 + 1.0).min(100.0);
        let widths = (0..centers.len())
            .map(|i| {
                let left = if i == 0 { lo } else { centers[i - 1] };
                let right = if i + 1 == centers.len() { hi } else { centers[i + 1] };
                (centers[i] - left).max(right - centers[i]).clamp(floor, range)
            })
            .collect();
        Parzen { lo, hi, centers, widths }
    }

    fn pdf(&self, x: f64) -> f64 {
        let k = self.centers.len() as f64 + 1.0;
        let prior = 1.0 / (self.hi - self.lo);
        let root_2pi = (2.0 * std::f64::consts::PI).sqrt();
        let kernels: f64 = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, w)| (-0.5 * ((x - c) / w).powi(2)).exp() / (w * root_2pi))
            .sum();
        (kernels + prior) / k
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let k = self.centers.len() + 1;
        let pick = rng.random_range(0..k);
        if pick == self.centers.len() {
            return rng.random_range(self.lo..self.hi);
        }
        let normal = Normal::new(self.centers[pick], self.widths[pick]).expect("positive width");
        for _ in 0..32 {
            let x = normal.sample(rng);
            if x >= self.lo && x <= self.hi {
                return x;
            }
        }
        self.centers[pick].clamp(self.lo, self.hi)
    }
}

/// Add-one smoothed frequencies over categorical options.
struct Frequencies(Vec<f64>);

impl Frequencies {
    fn fit(n_options: usize, obs: &[usize]) -> Self {
        let mut counts = vec![1.0; n_options];
        for &o in obs {
            counts[o] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Frequencies(counts.into_iter().map(|c| c / total).collect())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let mut u = rng.random::<f64>();
        for (i, p) in self.0.iter().enumerate() {
            if u < *p {
                return i;
            }
            u -= p;
        }
        self.0.len() - 1
    }
}

fn sample_uniform(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Params {
    space
        .dims
        .iter()
        .map(|d| {
            let v = match &d.dim {
                Dimension::Categorical { options } => ParamValue::Choice(options[rng.random_range(0..options.len())].clone()),
                dim => {
                    let (lo, hi, _) = numeric_bounds(dim).expect("numeric");
                    from_internal(dim, rng.random_range(lo..hi))
                }
            };
            (d.name.clone(), v)
        })
        .collect()
}

/// Propose the next parameters given the trial history.
pub fn suggest(history: &[Trial], space: &SearchSpace, seed: u64) -> Params {
    suggest_with(history, space, seed, &TpeSettings::default())
}

pub fn suggest_with(history: &[Trial], space: &SearchSpace, seed: u64, settings: &TpeSettings) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done: Vec<(f64, &Params)> = history
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .filter_map(|t| t.objective.filter(|o| o.is_finite()).map(|o| (o, &t.params)))
        .filter(|(_, p)| space.contains(p))
        .collect();
    if done.len() < settings.n_startup.max(2) {
        return sample_uniform(space, &mut rng);
    }
    // stable: equal objectives keep history order
    done.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_good = good_set_size(done.len(), settings.gamma).min(done.len() - 1);
    let (good, bad) = done.split_at(n_good);

    enum Model {
        Numeric(Parzen, Parzen),
        Choice(Frequencies, Frequencies, Vec<String>),
    }
    let models: Vec<Model> = space
        .dims
        .iter()
        .map(|d| match &d.dim {
            Dimension::Categorical { options } => {
                let idx = |set: &[(f64, &Params)]| -> Vec<usize> {
                    set.iter()
                        .filter_map(|(_, p)| p[&d.name].as_str())
                        .filter_map(|s| options.iter().position(|o| o == s))
                        .collect()
                };
                Model::Choice(
                    Frequencies::fit(options.len(), &idx(good)),
                    Frequencies::fit(options.len(), &idx(bad)),
                    options.clone(),
                )
            }
            dim => {
                let (lo, hi, _) = numeric_bounds(dim).expect("numeric");
                let vals = |set: &[(f64, &Params)]| -> Vec<f64> {
                    set.iter().filter_map(|(_, p)| to_internal(dim, &p[&d.name])).collect()
                };
                Model::Numeric(Parzen::fit(lo, hi, &vals(good)), Parzen::fit(lo, hi, &vals(bad)))
            }
        })
        .collect();

    let mut best: Option<(f64, Params)> = None;
    for _ in 0..settings.n_candidates.max(1) {
        let mut params = Params::new();
        let mut score = 0.0;
        for (d, m) in space.dims.iter().zip(&models) {
            match m {
                Model::Numeric(l, g) => {
                    let u = l.sample(&mut rng);
                    let v = from_internal(&d.dim, u);
                    let u = to_internal(&d.dim, &v).expect("numeric");
                    score += l.pdf(u).ln() - g.pdf(u).ln();
                    params.insert(d.name.clone(), v);
                }
                Model::Choice(l, g, options) => {
                    let i = l.sample(&mut rng);
                    score += l.0[i].ln() - g.0[i].ln();
                    params.insert(d.name.clone(), ParamValue::Choice(options[i].clone()));
                }
            }
        }
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, params));
        }
    }
    best.expect("at least one candidate").1
}

fn trial_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

/// Lowest-objective successful trial (earliest on ties).
pub fn best_trial(history: &[Trial]) -> Option<&Trial> {
    history
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .fold(None, |acc: Option<&Trial>, t| match acc {
            Some(b) if b.objective <= t.objective => Some(b),
            _ => Some(t),
        })
}

/// Best objective seen after each trial (`None` until the first success).
pub fn best_so_far(history: &[Trial]) -> Vec<Option<f64>> {
    let mut cur: Option<f64> = None;
    history
        .iter()
        .map(|t| {
            if let (TrialStatus::Ok, Some(o)) = (t.status, t.objective) {
                cur = Some(cur.map_or(o, |c| c.min(o)));
            }
            cur
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Run `budget` trials. Errors and non-finite objectives are recorded as
/// failed trials and left out of density fitting.
pub fn optimize<F, E>(objective: F, space: &SearchSpace, budget: usize, seed: u64, strategy: Strategy) -> Result<OptimizeOutcome>
where
    F: FnMut(&Params) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    optimize_from(Vec::new(), objective, space, budget, seed, strategy, &TpeSettings::default())
}

/// Continue a search from an existing history (e.g. one reloaded from disk).
pub fn optimize_from<F, E>(
    mut history: Vec<Trial>,
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    strategy: Strategy,
    settings: &TpeSettings,
) -> Result<OptimizeOutcome>
where
    F: FnMut(&Params) -> std::result::Result<f64, E>,
    E: fmt::Display,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    while history.len() < budget {
        let i = history.len();
        let s = trial_seed(seed, i);
        let params = match strategy {
            Strategy::Tpe => suggest_with(&history, space, s, settings),
            Strategy::Random => sample_uniform(space, &mut ChaCha8Rng::seed_from_u64(s)),
        };
        let trial = match objective(&params) {
            Ok(v) if v.is_finite() => Trial {
                params,
                objective: Some(v),
                status: TrialStatus::Ok,
            },
            Ok(v) => {
                log::warn!("trial {i}: non-finite objective {v}");
                Trial {
                    params,
                    objective: None,
                    status: TrialStatus::Failed,
                }
            }
            Err(e) => {
                log::warn!("trial {i} failed: {e}");
                Trial {
                    params,
                    objective: None,
                    status: TrialStatus::Failed,
                }
            }
        };
        history.push(trial);
    }
    let best = best_trial(&history)
        .cloned()
        .ok_or(Error::AllTrialsFailed(history.len()))?;
    Ok(OptimizeOutcome { best, history })
}

/// The MLP search space: optimizer, learning rate (log scale), epochs,
/// batch size, hidden units, keep probability and activation.
pub fn mlp_search_space() -> SearchSpace {
    SearchSpace::new()
        .categorical("optimizer", &["sgd", "adam"])
        .continuous("learning_rate", 0.001, 0.1, true)
        .int_range("epochs", 10, 1000)
        .int_range("batch_size", 10, 100)
        .int_range("hidden_units", 10, 1000)
        .continuous("keep_prob", 0.2, 0.9, false)
        .categorical("activation", &["tanh", "relu", "sigmoid"])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_space() -> SearchSpace {
        SearchSpace::new().continuous("x", 0.0, 1.0, false)
    }

    fn quad(p: &Params) -> std::result::Result<f64, String> {
        let x = p["x"].as_f64().unwrap();
        Ok((x - 0.3) * (x - 0.3))
    }

    #[test]
    fn empty_history_samples_in_bounds() {
        let space = mlp_search_space();
        for s in 0..50 {
            assert!(space.contains(&suggest(&[], &space, s)));
        }
    }

    #[test]
    fn identical_history_stays_in_bounds() {
        let space = mlp_search_space();
        let p = suggest(&[], &space, 1);
        let hist: Vec<Trial> = (0..20)
            .map(|_| Trial {
                params: p.clone(),
                objective: Some(1.0),
                status: TrialStatus::Ok,
            })
            .collect();
        for s in 0..20 {
            assert!(space.contains(&suggest(&hist, &space, s)));
        }
    }

    #[test]
    fn good_set_sizes() {
        assert_eq!(good_set_size(1, 0.25), 1);
        assert_eq!(good_set_size(10, 0.25), 3);
        assert_eq!(good_set_size(12, 0.25), 3);
        assert_eq!(good_set_size(13, 0.25), 4);
    }

    #[test]
    fn budget_one() {
        let out = optimize(quad, &quad_space(), 1, 3, Strategy::Tpe).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best, out.history[0]);
    }

    #[test]
    fn random_reproducible_and_monotone() {
        let a = optimize(quad, &quad_space(), 30, 9, Strategy::Random).unwrap();
        let b = optimize(quad, &quad_space(), 30, 9, Strategy::Random).unwrap();
        assert_eq!(a, b);
        let bsf = best_so_far(&a.history);
        for w in bsf.windows(2) {
            assert!(w[1].unwrap() <= w[0].unwrap());
        }
    }

    #[test]
    fn failures_recorded_and_all_failed_is_error() {
        let mut k = 0;
        let out = optimize(
            |p: &Params| {
                k += 1;
                if k % 2 == 0 {
                    Err("boom".to_string())
                } else {
                    quad(p)
                }
            },
            &quad_space(),
            20,
            1,
            Strategy::Tpe,
        )
        .unwrap();
        assert_eq!(out.history.iter().filter(|t| t.status == TrialStatus::Failed).count(), 10);
        let all_fail = optimize(|_: &Params| Err::<f64, _>("no"), &quad_space(), 5, 1, Strategy::Tpe);
        assert!(matches!(all_fail, Err(Error::AllTrialsFailed(5))));
        let nan = optimize(|_: &Params| Ok::<f64, String>(f64::NAN), &quad_space(), 3, 1, Strategy::Random);
        assert!(nan.is_err());
    }

    #[test]
    fn grid_oracle_minimum() {
        // exhaustive grid over [0,1] locates the optimum the search should approach
        let grid_best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|a, b| ((a - 0.3f64).powi(2)).total_cmp(&(b - 0.3f64).powi(2)))
            .unwrap();
        assert!((grid_best - 0.3).abs() < 1e-9);
        let hits = (0..10)
            .filter(|&s| {
                let out = optimize(quad, &quad_space(), 60, s, Strategy::Tpe).unwrap();
                let x = out.best.params["x"].as_f64().unwrap();
                (x - grid_best).abs() < 0.05
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn int_and_log_dims() {
        let space = SearchSpace::new().int_range("n", 1, 4).continuous("lr", 0.001, 0.1, true);
        let out = optimize(
            |p: &Params| {
                let n = p["n"].as_i64().unwrap() as f64;
                let lr = p["lr"].as_f64().unwrap();
                Ok::<f64, String>((n - 3.0).abs() + (lr.ln() - 0.01f64.ln()).abs())
            },
            &space,
            40,
            2,
            Strategy::Tpe,
        )
        .unwrap();
        assert!(out.history.iter().all(|t| space.contains(&t.params)));
        assert_eq!(out.best.params["n"], ParamValue::Int(3));
    }

    #[test]
    fn invalid_space_rejected() {
        let space = SearchSpace::new().continuous("x", 1.0, 1.0, false);
        assert!(optimize(quad, &space, 3, 0, Strategy::Random).is_err());
        let space = SearchSpace::new().categorical("c", &[]);
        assert!(space.validate().is_err());
    }

    #[test]
    fn trial_json_round_trip() {
        let t = Trial {
            params: suggest(&[], &mlp_search_space(), 4),
            objective: Some(0.125),
            status: TrialStatus::Ok,
        };
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<Trial>(&s).unwrap(), t);
    }
}
