use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Tp,
    Fp,
    Tn,
    Fn,
}

/// How a probability vector becomes a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Accept the argmax only when its probability reaches the threshold;
    /// otherwise answer "others". 0 is plain argmax.
    Threshold { threshold: f64 },
    TopK { k: usize },
}

impl Default for Policy {
    fn default() -> Self {
        Policy::Threshold { threshold: 0.0 }
    }
}

fn ranked(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

pub fn argmax(probs: &[f64]) -> usize {
    ranked(probs)[0]
}

/// Argmax label when its probability is at least `threshold`, else `None`
/// ("others").
pub fn decide_with_confidence(probs: &[f64], threshold: f64) -> Option<usize> {
    let best = argmax(probs);
    (probs[best] >= threshold).then_some(best)
}

/// Outcome of a single decision. `None` and the background label both mean
/// "not monitored"; a monitored sample assigned to another monitored site is
/// a false negative.
pub fn outcome(true_label: usize, decided: Option<usize>, background: Option<usize>) -> Outcome {
    let negative = |l: Option<usize>| l.is_none() || l == background;
    match (negative(Some(true_label)), negative(decided)) {
        (false, _) if decided == Some(true_label) => Outcome::Tp,
        (false, _) => Outcome::Fn,
        (true, true) => Outcome::Tn,
        (true, false) => Outcome::Fp,
    }
}

/// Top-k outcome. Monitored samples are FN whenever background is among the
/// k best, otherwise TP iff the true label is; background samples are FP iff
/// their argmax is monitored.
pub fn topk_outcome(probs: &[f64], k: usize, true_label: usize, background: Option<usize>) -> Result<Outcome> {
    if k == 0 || k > probs.len() {
        return Err(Error::invalid(format!("k={k} must lie in 1..={}", probs.len())));
    }
    let top = &ranked(probs)[..k];
    Ok(if Some(true_label) == background {
        outcome(true_label, Some(top[0]), background)
    } else if background.is_some_and(|b| top.contains(&b)) || !top.contains(&true_label) {
        Outcome::Fn
    } else {
        Outcome::Tp
    })
}

pub fn apply_policy(probs: &[f64], policy: &Policy, true_label: usize, background: Option<usize>) -> Result<Outcome> {
    match *policy {
        Policy::Threshold { threshold } => Ok(outcome(true_label, decide_with_confidence(probs, threshold), background)),
        Policy::TopK { k } => topk_outcome(probs, k, true_label, background),
    }
}

/// Posterior that a positive is truly monitored, with the base rate taken
/// from instance counts.
pub fn bdr(tpr: f64, fpr: f64, n_monitored: usize, n_background: usize) -> Result<f64> {
    if n_monitored == 0 || n_background == 0 {
        return Err(Error::invalid("BDR needs monitored and background counts > 0"));
    }
    let pm = n_monitored as f64 / (n_monitored + n_background) as f64;
    let num = tpr * pm;
    let den = num + fpr * (1.0 - pm);
    if den == 0.0 {
        return Err(Error::Undefined("BDR with tpr = fpr = 0".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let mut c = Confusion::default();
        for o in outcomes {
            c.add(*o);
        }
        c
    }

    pub fn add(&mut self, o: Outcome) {
        match o {
            Outcome::Tp => self.tp += 1,
            Outcome::Fp => self.fp += 1,
            Outcome::Tn => self.tn += 1,
            Outcome::Fn => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tpr(&self) -> Option<f64> {
        let m = self.tp + self.fn_;
        (m > 0).then(|| self.tp as f64 / m as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        let b = self.fp + self.tn;
        (b > 0).then(|| self.fp as f64 / b as f64)
    }
}

/// Within-monitored accuracy: TPs over monitored samples.
pub fn wmacc(outcomes: &[Outcome]) -> Result<f64> {
    Confusion::from_outcomes(outcomes)
        .tpr()
        .ok_or_else(|| Error::Undefined("WMacc with no monitored samples".into()))
}

/// Class-weighted accuracy and MSE for binary labels. `predicted` holds the
/// predicted probability of class 1 (a hard 0/1 works too); the decision is
/// class 1 iff it exceeds 0.5. Instance weights are the class weights of the
/// true labels rescaled to sum to N.
pub fn weighted_metrics(predicted: &[f64], labels: &[usize], class_weights: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::shape(format!("{} predictions vs {} labels", predicted.len(), labels.len())));
    }
    if class_weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("class weights must be positive"));
    }
    let mut w = Vec::with_capacity(labels.len());
    for &l in labels {
        w.push(
            *class_weights
                .get(l)
                .ok_or_else(|| Error::invalid(format!("no weight for class {l}")))?,
        );
    }
    let n = labels.len() as f64;
    let scale = n / w.iter().sum::<f64>();
    let (mut acc, mut mse) = (0.0, 0.0);
    for ((p, &l), wi) in predicted.iter().zip(labels).zip(&w) {
        let wi = wi * scale;
        let decided = usize::from(*p > 0.5);
        acc += wi * f64::from(u8::from(decided == l));
        mse += wi * (l as f64 - p).powi(2);
    }
    Ok((acc / n, mse / n))
}

/// Per-site fraction of instances that were true positives, pooled over
/// every evaluation that contributed outcomes.
pub fn site_accuracy<'a>(outcomes: impl IntoIterator<Item = (&'a str, Outcome)>) -> BTreeMap<String, f64> {
    let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (site, o) in outcomes {
        let e = tally.entry(site.to_string()).or_default();
        e.0 += usize::from(o == Outcome::Tp);
        e.1 += 1;
    }
    tally.into_iter().map(|(s, (tp, n))| (s, tp as f64 / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bdr_table_rows() {
        assert_abs_diff_eq!(bdr(0.94, 0.05, 9000, 20000).unwrap(), 0.894, epsilon = 0.005);
        assert_abs_diff_eq!(bdr(0.95, 0.003, 9000, 20000).unwrap(), 0.993, epsilon = 0.005);
        assert_eq!(bdr(0.3, 0.0, 10, 10).unwrap(), 1.0);
        assert_eq!(bdr(0.0, 0.2, 10, 10).unwrap(), 0.0);
        assert!(bdr(0.0, 0.0, 10, 10).is_err());
    }

    #[test]
    fn bdr_monotone_on_grid() {
        for i in 1..20 {
            for j in 1..20 {
                let (t, f) = (i as f64 / 20.0, j as f64 / 20.0);
                let b = bdr(t, f, 100, 300).unwrap();
                assert!(bdr(t + 0.01, f, 100, 300).unwrap() >= b);
                assert!(bdr(t, f + 0.01, 100, 300).unwrap() <= b);
            }
        }
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(decide_with_confidence(&[0.6, 0.4], 0.7), None);
        assert_eq!(decide_with_confidence(&[0.6, 0.4], 0.0), Some(0));
        assert_eq!(decide_with_confidence(&[0.2, 0.3, 0.5], 0.5), Some(2));
    }

    #[test]
    fn outcome_rules() {
        let bg = Some(3);
        assert_eq!(outcome(0, Some(0), bg), Outcome::Tp);
        assert_eq!(outcome(0, Some(1), bg), Outcome::Fn);
        assert_eq!(outcome(0, None, bg), Outcome::Fn);
        assert_eq!(outcome(0, Some(3), bg), Outcome::Fn);
        assert_eq!(outcome(3, Some(1), bg), Outcome::Fp);
        assert_eq!(outcome(3, None, bg), Outcome::Tn);
        assert_eq!(outcome(3, Some(3), bg), Outcome::Tn);
    }

    #[test]
    fn topk_rules() {
        // classes 0..3 monitored, 3 = background
        let p = [0.4, 0.1, 0.2, 0.3];
        assert_eq!(topk_outcome(&p, 3, 0, Some(3)).unwrap(), Outcome::Fn);
        let p = [0.4, 0.3, 0.2, 0.1];
        assert_eq!(topk_outcome(&p, 3, 1, Some(3)).unwrap(), Outcome::Tp);
        assert_eq!(topk_outcome(&p, 1, 1, Some(3)).unwrap(), Outcome::Fn);
        assert_eq!(topk_outcome(&p, 2, 3, Some(3)).unwrap(), Outcome::Fp);
        assert!(topk_outcome(&p, 5, 0, Some(3)).is_err());
    }

    #[test]
    fn wmacc_tally() {
        use Outcome::*;
        let o = [Tp, Tp, Fn, Tp, Tn, Fp, Tp, Fn, Tp, Tp, Fn, Fn];
        // 6 TPs over 10 monitored
        assert_abs_diff_eq!(wmacc(&o).unwrap(), 0.6);
        assert_eq!(wmacc(&[Tp]).unwrap(), 1.0);
        assert_eq!(wmacc(&[Fn, Tn]).unwrap(), 0.0);
        assert!(wmacc(&[Tn, Fp]).is_err());
    }

    #[test]
    fn weighted_metric_cases() {
        let labels = [0, 0, 0, 0, 1, 1];
        let (acc, mse) = weighted_metrics(&[0.0, 0.0, 0.0, 0.0, 1.0, 1.0], &labels, &[0.75, 1.5]).unwrap();
        assert_eq!((acc, mse), (1.0, 0.0));
        // majority predictor, balanced weights w0 = 6/(2·4), w1 = 6/(2·2)
        let (acc, _) = weighted_metrics(&[0.0; 6], &labels, &[0.75, 1.5]).unwrap();
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);
        // hand: p = [.2,.6,.1,0,.9,.4], w = [.75,.75,.75,.75,1.5,1.5]
        // correct: 1,0,1,1,1,0 → acc = (.75+.75+.75+1.5)/6 = 0.625
        // sq err: .04,.36,.01,0,.01,.36 → Σw·e = .03+.27+.0075+0+.015+.54 = .8625 → /6 = .14375
        let (acc, mse) = weighted_metrics(&[0.2, 0.6, 0.1, 0.0, 0.9, 0.4], &labels, &[0.75, 1.5]).unwrap();
        assert_abs_diff_eq!(acc, 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(mse, 0.14375, epsilon = 1e-12);
    }

    #[test]
    fn site_accuracy_pooling() {
        use Outcome::*;
        let it1 = [("a", Tp), ("a", Fn), ("b", Tp), ("b", Tp)];
        let it2 = [("a", Tp), ("a", Tp), ("b", Fn), ("b", Fn)];
        let pooled = site_accuracy(it1.iter().chain(&it2).copied());
        let mean_a = (site_accuracy(it1)["a"] + site_accuracy(it2)["a"]) / 2.0;
        assert_abs_diff_eq!(pooled["a"], mean_a);
        assert_eq!(pooled["b"], 0.5);
        assert_eq!(site_accuracy([("c", Tp)])["c"], 1.0);
        assert_eq!(site_accuracy([("c", Fn)])["c"], 0.0);
    }
}
