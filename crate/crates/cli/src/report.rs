use std::fmt::Write as _;

use sacroscan::harness::{CvSummary, FoldResult};
use sacroscan::metrics::{BasicMetrics, ConfusionTable, Interval};

fn interval(i: &Interval) -> String {
    format!("{:.4}  95% CI [{:.4}, {:.4}]", i.mean, i.lo95, i.hi95)
}

fn metric_lines(out: &mut String, c: &ConfusionTable, m: &BasicMetrics) {
    writeln!(out, "confusion      tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_).unwrap();
    for (name, v) in m.named() {
        writeln!(out, "{name:<14} {v}").unwrap();
    }
}

/// Plain-text cross-validation report.
pub fn render(folds: &[FoldResult], s: &CvSummary) -> String {
    let mut out = String::new();
    let members = folds.first().map(|f| f.members.clone()).unwrap_or_default();
    writeln!(out, "ensemble       {}", members.join(" + ")).unwrap();
    writeln!(out, "folds          {}", folds.len()).unwrap();
    writeln!(out, "auc            {}", interval(&s.auc)).unwrap();
    for (name, i) in &s.member_auc {
        writeln!(out, "member auc     {}  {name}", interval(i)).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "fold  cases  auc     members").unwrap();
    for f in folds {
        let fmt = |a: Option<f64>| a.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let member: Vec<String> = (0..f.members.len()).map(|m| fmt(f.member_auc(m))).collect();
        writeln!(
            out,
            "{:<4}  {:<5}  {:<6}  {}",
            f.fold,
            f.cases.len(),
            fmt(f.auc()),
            member.join(" ")
        )
        .unwrap();
    }
    if !s.folds_without_auc.is_empty() {
        writeln!(out, "folds without auc: {:?}", s.folds_without_auc).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "threshold      {}", s.threshold).unwrap();
    metric_lines(&mut out, &s.pooled_confusion, &s.pooled_metrics);
    out
}

pub fn render_eval(
    cases: usize,
    threshold: f64,
    auc: f64,
    ci: &Interval,
    c: &ConfusionTable,
    m: &BasicMetrics,
) -> String {
    let mut out = String::new();
    writeln!(out, "cases          {cases}").unwrap();
    writeln!(out, "auc            {auc:.4}  95% CI [{:.4}, {:.4}]", ci.lo95, ci.hi95).unwrap();
    writeln!(out, "threshold      {threshold}").unwrap();
    metric_lines(&mut out, c, m);
    out
}
