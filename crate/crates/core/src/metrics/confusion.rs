use std::fmt;

use serde::{Deserialize, Serialize};

use super::check_inputs;
use crate::error::{Error, Result};
use crate::types::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTable {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionTable {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

/// Counts at `threshold` (positive iff `prob >= threshold`).
pub fn confusion(probs: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionTable> {
    check_inputs(probs, labels)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidInput(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut t = ConfusionTable::default();
    for (&p, &l) in probs.iter().zip(labels) {
        match (p >= threshold, l.is_positive()) {
            (true, true) => t.tp += 1,
            (true, false) => t.fp += 1,
            (false, false) => t.tn += 1,
            (false, true) => t.fn_ += 1,
        }
    }
    Ok(t)
}

/// A ratio that is `None` when its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Metric(pub Option<f64>);

impl Metric {
    fn ratio(num: u64, den: u64) -> Metric {
        Metric((den > 0).then(|| num as f64 / den as f64))
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(self) -> bool {
        self.0.is_some()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            None => f.write_str("undefined"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: Metric,
    pub sensitivity: Metric,
    pub specificity: Metric,
    pub ppv: Metric,
    pub npv: Metric,
    pub precision: Metric,
    pub recall: Metric,
    /// `2 tp / (2 tp + fp + fn)`, the harmonic mean of precision and recall
    /// wherever both are defined and not both zero.
    pub f1: Metric,
}

impl BasicMetrics {
    /// `(name, value)` pairs in a fixed reporting order.
    pub fn named(&self) -> [(&'static str, Metric); 8] {
        [
            ("accuracy", self.accuracy),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("ppv", self.ppv),
            ("npv", self.npv),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
    }
}

pub fn basic_metrics(t: &ConfusionTable) -> BasicMetrics {
    let sensitivity = Metric::ratio(t.tp, t.tp + t.fn_);
    let ppv = Metric::ratio(t.tp, t.tp + t.fp);
    BasicMetrics {
        accuracy: Metric::ratio(t.tp + t.tn, t.total()),
        sensitivity,
        specificity: Metric::ratio(t.tn, t.tn + t.fp),
        ppv,
        npv: Metric::ratio(t.tn, t.tn + t.fn_),
        precision: ppv,
        recall: sensitivity,
        f1: Metric::ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn_),
    }
}
