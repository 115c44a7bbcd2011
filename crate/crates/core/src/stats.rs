//! Pearson, Spearman and Kendall tau-b correlations with two-sided p-values.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pearson,
    Spearman,
    Kendall,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pearson, Method::Spearman, Method::Kendall];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pearson => "pearson",
            Method::Spearman => "spearman",
            Method::Kendall => "kendall",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub method: Method,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn correlate(method: Method, x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    match method {
        Method::Pearson => pearson(x, y),
        Method::Spearman => spearman(x, y),
        Method::Kendall => kendall(x, y),
    }
}

fn check(x: &[f64], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("length mismatch ({} vs {})", x.len(), y.len()),
        });
    }
    if x.len() < 3 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("need at least 3 pairs, got {}", x.len()),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: "non-finite value".into(),
        });
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::ZeroVariance("x"));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(Error::ZeroVariance("y"));
    }
    Ok(x.len())
}

fn pearson_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Two-sided p-value of `r` under the Student-t approximation with `n - 2` dof.
fn t_p_value(r: f64, n: usize) -> f64 {
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let dof = (n - 2) as f64;
    let t = r.abs() * (dof / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof is positive");
    (2.0 * dist.sf(t)).clamp(0.0, 1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = check(x, y)?;
    let r = pearson_r(x, y);
    Ok(CorrelationResult {
        method: Method::Pearson,
        r,
        p_value: t_p_value(r, n),
        n,
    })
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = check(x, y)?;
    let r = pearson_r(&average_ranks(x), &average_ranks(y));
    Ok(CorrelationResult {
        method: Method::Spearman,
        r,
        p_value: t_p_value(r, n),
        n,
    })
}

/// Tie group sizes of an already sorted slice.
fn tie_groups<T: PartialEq>(sorted: &[T]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            if run > 1 {
                out.push(run);
            }
            run = 1;
        }
    }
    if run > 1 {
        out.push(run);
    }
    out
}

/// Stable merge sort returning the number of inversions.
fn sort_count_swaps(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_count_swaps(&mut v[..mid], buf) + sort_count_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall tau-b in O(n log n) (Knight's algorithm); p-value from the normal
/// approximation of the concordance statistic with tie-corrected variance.
pub fn kendall(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    let n = check(x, y)?;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let x_ties = tie_groups(&xs);
    let joint_ties = tie_groups(&pairs);
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = sort_count_swaps(&mut ys, &mut Vec::with_capacity(n));
    let y_ties = tie_groups(&ys);

    let pairs_in = |groups: &[u64]| groups.iter().map(|t| t * (t - 1) / 2).sum::<u64>();
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let n1 = pairs_in(&x_ties);
    let n2 = pairs_in(&y_ties);
    let n3 = pairs_in(&joint_ties);
    // concordant minus discordant
    let s = n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * swaps as i64;
    let tau = (s as f64 / ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt()).clamp(-1.0, 1.0);

    let nf = n as f64;
    let sum = |groups: &[u64], f: &dyn Fn(f64) -> f64| groups.iter().map(|&t| f(t as f64)).sum::<f64>();
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let vt = sum(&x_ties, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum(&y_ties, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum(&x_ties, &|t| t * (t - 1.0)) * sum(&y_ties, &|t| t * (t - 1.0)) / (2.0 * nf * (nf - 1.0));
    let v2 = sum(&x_ties, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&y_ties, &|t| t * (t - 1.0) * (t - 2.0))
        / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let var = (v0 - vt - vu) / 18.0 + v1 + v2;
    let p_value = if var > 0.0 {
        let z = s as f64 / var.sqrt();
        (2.0 * Normal::standard().sf(z.abs())).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(CorrelationResult {
        method: Method::Kendall,
        r: tau,
        p_value,
        n,
    })
}

/// One report row: an indicator correlated against one city score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub quarter: String,
    pub indicator: String,
    pub score_name: String,
    #[serde(flatten)]
    pub result: CorrelationResult,
}

pub fn write_correlation_csv(out: &mut impl Write, rows: &[CorrelationRow]) -> std::io::Result<()> {
    writeln!(out, "quarter,indicator,score_name,method,r,p,n")?;
    for row in rows {
        let r = &row.result;
        writeln!(out, "{},{},{},{},{},{},{}", row.quarter, row.indicator, row.score_name, r.method, r.r, r.p_value, r.n)?;
    }
    Ok(())
}
