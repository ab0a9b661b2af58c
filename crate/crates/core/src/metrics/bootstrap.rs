use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::types::Label;

pub const DEFAULT_RESAMPLES: usize = 2000;

/// Point estimate with a 95% percentile-bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() && frac > 0.0 {
        sorted[i] + (sorted[i + 1] - sorted[i]) * frac
    } else {
        sorted[i]
    }
}

fn percentile_interval(point: f64, mut stats: Vec<f64>) -> Interval {
    stats.sort_by(f64::total_cmp);
    Interval {
        mean: point,
        lo95: quantile(&stats, 0.025),
        hi95: quantile(&stats, 0.975),
    }
}

/// Mean taken about the first value, so constant data averages exactly.
fn mean_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else { return f64::NAN };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least one resample".into()));
    }
    Ok(())
}

/// Mean of `values` with a percentile interval over `resamples` resamples
/// of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<Interval> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 values, got {}",
            values.len()
        )));
    }
    check_resamples(resamples)?;
    let n = values.len();
    let mean = mean_of(values.iter().copied());
    let mut rng = rng::stream(seed, &[tag::BOOTSTRAP]);
    let stats = (0..resamples)
        .map(|_| {
            let picks: Vec<f64> = (0..n).map(|_| values[rng.random_range(0..n)]).collect();
            mean_of(picks.iter().copied())
        })
        .collect();
    Ok(percentile_interval(mean, stats))
}

/// Case-level bootstrap of `metric`. Positives and negatives are resampled
/// separately so every resample keeps both classes at their observed counts.
pub fn bootstrap_cases<F>(
    probs: &[f64],
    labels: &[Label],
    metric: F,
    resamples: usize,
    seed: u64,
) -> Result<Interval>
where
    F: Fn(&[f64], &[Label]) -> Result<f64>,
{
    super::check_inputs(probs, labels)?;
    if probs.len() < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least 2 cases".into()));
    }
    check_resamples(resamples)?;
    let point = metric(probs, labels)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
    let mut rng = rng::stream(seed, &[tag::BOOTSTRAP]);
    let mut p = Vec::with_capacity(probs.len());
    let mut l = Vec::with_capacity(probs.len());
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        p.clear();
        l.clear();
        for group in [&pos, &neg] {
            for _ in 0..group.len() {
                let i = group[rng.random_range(0..group.len())];
                p.push(probs[i]);
                l.push(labels[i]);
            }
        }
        stats.push(metric(&p, &l)?);
    }
    Ok(percentile_interval(point, stats))
}
