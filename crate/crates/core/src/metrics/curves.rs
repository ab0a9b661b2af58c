use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::check_inputs;
use super::confusion::{basic_metrics, confusion, Metric};
use crate::error::{Error, Result};
use crate::types::Label;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Roc,
    Pr,
    SensSpecVsThreshold,
    F1RecallVsThreshold,
    PpvNpvVsPrevalence,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Roc => "roc",
            CurveKind::Pr => "pr",
            CurveKind::SensSpecVsThreshold => "sens_spec_vs_threshold",
            CurveKind::F1RecallVsThreshold => "f1_recall_vs_threshold",
            CurveKind::PpvNpvVsPrevalence => "ppv_npv_vs_prevalence",
        }
    }

    /// CSV column names.
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            CurveKind::Roc => &["fpr", "tpr"],
            CurveKind::Pr => &["recall", "precision"],
            CurveKind::SensSpecVsThreshold => &["threshold", "sensitivity", "specificity"],
            CurveKind::F1RecallVsThreshold => &["threshold", "f1", "recall"],
            CurveKind::PpvNpvVsPrevalence => &["prevalence", "ppv", "npv"],
        }
    }

    /// ROC and PR curves may step vertically, so their x only has to be
    /// non-decreasing.
    fn allows_repeated_x(self) -> bool {
        matches!(self, CurveKind::Roc | CurveKind::Pr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

impl CurveSeries {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        for (i, p) in self.points.iter().enumerate() {
            if !unit(p.x) || !unit(p.y) || p.y2.is_some_and(|v| !unit(v)) {
                return Err(Error::Internal(format!(
                    "{} point {i} {p:?} leaves the unit square",
                    self.kind.as_str()
                )));
            }
            if i > 0 {
                let prev = self.points[i - 1].x;
                let ok = if self.kind.allows_repeated_x() {
                    p.x >= prev
                } else {
                    p.x > prev
                };
                if !ok {
                    return Err(Error::Internal(format!(
                        "{} x not increasing at point {i}",
                        self.kind.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let cols = self.kind.columns();
        let mut out = cols.join(",");
        out.push('\n');
        for p in &self.points {
            let _ = write!(out, "{},{}", p.x, p.y);
            if cols.len() == 3 {
                let _ = write!(out, ",{}", p.y2.unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Distinct probabilities in descending order with the positive and
/// negative counts at each.
fn tie_groups(probs: &[f64], labels: &[Label]) -> Vec<(f64, u64, u64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in order {
        let (pos, neg) = if labels[i].is_positive() { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == probs[i] => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((probs[i], pos, neg)),
        }
    }
    groups
}

fn class_counts(labels: &[Label]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|l| l.is_positive()).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput(
            "both classes must be present".into(),
        ));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve by the trapezoidal rule over distinct
/// thresholds. Tied cases form a diagonal segment, so the area equals the
/// Mann-Whitney statistic with ties counted one half.
pub fn roc_auc(probs: &[f64], labels: &[Label]) -> Result<(f64, CurveSeries)> {
    check_inputs(probs, labels)?;
    let (pos, neg) = class_counts(labels)?;
    let mut points = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        y2: None,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area = 0u128;
    for (_, gp, gn) in tie_groups(probs, labels) {
        // trapezoid in count units: gn * (tp + tp + gp)
        twice_area += gn as u128 * (2 * tp + gp) as u128;
        tp += gp;
        fp += gn;
        points.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            y2: None,
        });
    }
    let auc = twice_area as f64 / (2.0 * pos as f64 * neg as f64);
    Ok((
        auc,
        CurveSeries {
            kind: CurveKind::Roc,
            points,
        },
    ))
}

/// Precision against recall, one point per distinct threshold.
pub fn pr_curve(probs: &[f64], labels: &[Label]) -> Result<CurveSeries> {
    check_inputs(probs, labels)?;
    let (pos, _) = class_counts(labels)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let points = tie_groups(probs, labels)
        .into_iter()
        .map(|(_, gp, gn)| {
            tp += gp;
            fp += gn;
            CurvePoint {
                x: tp as f64 / pos as f64,
                y: tp as f64 / (tp + fp) as f64,
                y2: None,
            }
        })
        .collect();
    Ok(CurveSeries {
        kind: CurveKind::Pr,
        points,
    })
}

/// Sensitivity/specificity and F1/recall at each threshold of `grid`.
pub fn threshold_sweep(
    probs: &[f64],
    labels: &[Label],
    grid: &[f64],
) -> Result<(CurveSeries, CurveSeries)> {
    check_inputs(probs, labels)?;
    class_counts(labels)?;
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty threshold grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidInput(
            "threshold grid must be strictly increasing within [0, 1]".into(),
        ));
    }
    let defined = |m: Metric| m.value().expect("both classes present");
    let mut sens_spec = Vec::with_capacity(grid.len());
    let mut f1_recall = Vec::with_capacity(grid.len());
    for &t in grid {
        let m = basic_metrics(&confusion(probs, labels, t)?);
        sens_spec.push(CurvePoint {
            x: t,
            y: defined(m.sensitivity),
            y2: Some(defined(m.specificity)),
        });
        f1_recall.push(CurvePoint {
            x: t,
            y: defined(m.f1),
            y2: Some(defined(m.recall)),
        });
    }
    Ok((
        CurveSeries {
            kind: CurveKind::SensSpecVsThreshold,
            points: sens_spec,
        },
        CurveSeries {
            kind: CurveKind::F1RecallVsThreshold,
            points: f1_recall,
        },
    ))
}

/// Post-test probabilities at prevalence `p` by Bayes' rule.
pub fn prevalence_adjusted(sensitivity: f64, specificity: f64, p: f64) -> Result<(Metric, Metric)> {
    for (name, v) in [("sensitivity", sensitivity), ("specificity", specificity), ("prevalence", p)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} {v} outside [0, 1]")));
        }
    }
    let ratio = |num: f64, den: f64| Metric((den > 0.0).then(|| num / den));
    let tp = sensitivity * p;
    let fp = (1.0 - specificity) * (1.0 - p);
    let tn = specificity * (1.0 - p);
    let fn_ = (1.0 - sensitivity) * p;
    Ok((ratio(tp, tp + fp), ratio(tn, tn + fn_)))
}

/// PPV and NPV over a strictly increasing prevalence grid.
pub fn prevalence_series(sensitivity: f64, specificity: f64, grid: &[f64]) -> Result<CurveSeries> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "prevalence grid must be strictly increasing".into(),
        ));
    }
    let points = grid
        .iter()
        .map(|&p| {
            let (ppv, npv) = prevalence_adjusted(sensitivity, specificity, p)?;
            match (ppv.value(), npv.value()) {
                (Some(y), Some(y2)) => Ok(CurvePoint { x: p, y, y2: Some(y2) }),
                _ => Err(Error::Degenerate(format!(
                    "ppv or npv undefined at prevalence {p}"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(CurveSeries {
        kind: CurveKind::PpvNpvVsPrevalence,
        points,
    })
}
