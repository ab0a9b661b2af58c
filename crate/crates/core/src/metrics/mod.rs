//! Diagnostic accuracy metrics, ROC/PR and threshold curves, prevalence
//! adjustment and bootstrap intervals. `ActiveInflammation` is the positive
//! class and a case is called positive when its probability is at least the
//! threshold.

mod bootstrap;
mod confusion;
mod curves;

pub use bootstrap::{bootstrap_cases, bootstrap_ci, Interval, DEFAULT_RESAMPLES};
pub use confusion::{basic_metrics, confusion, BasicMetrics, ConfusionTable, Metric};
pub use curves::{
    pr_curve, prevalence_adjusted, prevalence_series, roc_auc, threshold_sweep, CurveKind,
    CurvePoint, CurveSeries,
};

use crate::error::{Error, Result};
use crate::types::Label;

pub(crate) fn check_inputs(probs: &[f64], labels: &[Label]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidInput("no cases to evaluate".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}
