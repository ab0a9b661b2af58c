//! Paired rank test, rater agreement and the 2x2 chi-square test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size for which the Wilcoxon null distribution is
/// enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidInput(format!(
                "paired sample needs equal non-empty lists, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("paired sample contains non-finite values".into()));
        }
        Ok(PairedSample { a, b })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// `a` tends to exceed `b`.
    Greater,
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_sided" | "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::InvalidInput(format!(
                "unknown alternative {other:?} (expected two_sided, greater or less)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Approximate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: String,
    pub statistic: f64,
    pub n: usize,
    pub method: Method,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative: Option<Alternative>,
    /// Pairs with zero difference that were dropped before ranking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeros_dropped: Option<usize>,
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Wilcoxon signed-rank test on `a - b`, dropping zero differences.
///
/// For up to [`WILCOXON_EXACT_MAX_N`] non-zero pairs the p-value is exact:
/// the null distribution of W over all `2^n` sign assignments of the
/// observed (average) ranks is counted by dynamic programming over
/// half-ranks. Larger samples use the normal approximation with tie and
/// continuity corrections.
pub fn wilcoxon_signed_rank(s: &PairedSample, alternative: Alternative) -> Result<TestResult> {
    if s.a.is_empty() || s.a.len() != s.b.len() {
        return Err(Error::InvalidInput(format!(
            "paired sample needs equal non-empty lists, got {} and {}",
            s.a.len(),
            s.b.len()
        )));
    }
    let diffs: Vec<f64> = s.a.iter().zip(&s.b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let zeros = s.a.len() - diffs.len();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::Degenerate(
            "all paired differences are zero; the signed-rank test is undefined".into(),
        ));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();

    let (p, method) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_p(&ranks, w, alternative), Method::Exact)
    } else {
        (normal_p(n, &ties, w, alternative), Method::Approximate)
    };
    Ok(TestResult {
        test: "wilcoxon_signed_rank".into(),
        statistic: w,
        n,
        method,
        p,
        alternative: Some(alternative),
        zeros_dropped: Some(zeros),
    })
}

fn exact_p(ranks: &[f64], w: f64, alternative: Alternative) -> f64 {
    // average ranks are multiples of 1/2
    let half: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = half.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &h in &half {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + h] += counts[s];
            }
        }
        reach += h;
    }
    let total = (1u64 << ranks.len()) as f64;
    let obs = (2.0 * w).round() as usize;
    let upper = counts[obs..].iter().sum::<u64>() as f64 / total;
    let lower = counts[..=obs].iter().sum::<u64>() as f64 / total;
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

fn normal_p(n: usize, ties: &[usize], w: f64, alternative: Alternative) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
    let z = Normal::standard();
    match alternative {
        Alternative::Greater => z.sf((w - mean - 0.5) / sd),
        Alternative::Less => z.cdf((w - mean + 0.5) / sd),
        Alternative::TwoSided => {
            let d = ((w - mean).abs() - 0.5).max(0.0);
            (2.0 * z.sf(d / sd)).min(1.0)
        }
    }
}

/// Cohen's kappa for a square agreement table (rows: rater 1, columns:
/// rater 2).
pub fn cohen_kappa(table: &[Vec<u64>]) -> Result<f64> {
    let k = table.len();
    if k < 2 || table.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidInput(format!(
            "kappa needs a square table with at least 2 categories, got {k} rows"
        )));
    }
    let total: u64 = table.iter().flatten().sum();
    if total == 0 {
        return Err(Error::InvalidInput("agreement table is empty".into()));
    }
    let n = total as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let cols: Vec<f64> = (0..k)
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64 / n)
        .collect();
    let po = (0..k).map(|i| table[i][i]).sum::<u64>() as f64 / n;
    let pe: f64 = rows.iter().zip(&cols).map(|(r, c)| r * c).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Err(Error::Degenerate(
            "expected agreement is 1; kappa is undefined".into(),
        ));
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Pearson chi-square test of independence for a 2x2 table (df = 1, no
/// continuity correction).
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<TestResult> {
    let n = table.iter().flatten().sum::<u64>() as f64;
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "chi-square needs non-zero margins, got rows {rows:?} and columns {cols:?}"
        )));
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] as f64 * cols[j] as f64 / n;
            let d = table[i][j] as f64 - e;
            stat += d * d / e;
        }
    }
    let p = ChiSquared::new(1.0).expect("df 1").sf(stat);
    Ok(TestResult {
        test: "chi_square_2x2".into(),
        statistic: stat,
        n: n as usize,
        method: Method::Approximate,
        p,
        alternative: None,
        zeros_dropped: None,
    })
}
