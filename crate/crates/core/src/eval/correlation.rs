use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrelationMethod {
    Pearson,
    Kendall,
}

impl fmt::Display for CorrelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Kendall => "kendall",
        })
    }
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "kendall" => Ok(CorrelationMethod::Kendall),
            other => Err(Error::UnknownName {
                kind: "correlation method",
                name: other.into(),
                valid: "pearson, kendall".into(),
            }),
        }
    }
}

impl CorrelationMethod {
    pub fn compute(self, xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
        match self {
            CorrelationMethod::Pearson => pearson(xs, ys),
            CorrelationMethod::Kendall => kendall_tau(xs, ys),
        }
    }
}

/// A correlation coefficient, or `None` when the inputs are degenerate
/// (fewer than two points, or no variation on one side).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub method: CorrelationMethod,
    pub coefficient: Option<f64>,
    pub n: usize,
}

fn check(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::param(format!(
            "correlation inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::param("correlation inputs must be finite"));
    }
    Ok(())
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check(xs, ys)?;
    let n = xs.len();
    let result = |coefficient| CorrelationResult {
        method: CorrelationMethod::Pearson,
        coefficient,
        n,
    };
    if n < 2 {
        return Ok(result(None));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(result(None));
    }
    Ok(result(Some(
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
    )))
}

/// Kendall's tau-b in O(n log n) (Knight's merge-sort algorithm).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult> {
    check(xs, ys)?;
    let n = xs.len();
    let result = |coefficient| CorrelationResult {
        method: CorrelationMethod::Kendall,
        coefficient,
        n,
    };
    if n < 2 {
        return Ok(result(None));
    }

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let pairs_of = |t: i64| t * (t - 1) / 2;
    let n0 = pairs_of(n as i64);

    // Ties in x, and joint ties in (x, y).
    let (mut tied_x, mut tied_xy) = (0i64, 0i64);
    let (mut run_x, mut run_xy) = (1i64, 1i64);
    for i in 1..n {
        if pairs[i].0 == pairs[i - 1].0 {
            run_x += 1;
            if pairs[i].1 == pairs[i - 1].1 {
                run_xy += 1;
            } else {
                tied_xy += pairs_of(run_xy);
                run_xy = 1;
            }
        } else {
            tied_x += pairs_of(run_x);
            tied_xy += pairs_of(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tied_x += pairs_of(run_x);
    tied_xy += pairs_of(run_xy);

    // Discordant pairs = swaps needed to sort y (stable merge sort).
    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys_sorted, &mut buf);

    let mut tied_y = 0i64;
    let mut run_y = 1i64;
    for i in 1..n {
        if ys_sorted[i] == ys_sorted[i - 1] {
            run_y += 1;
        } else {
            tied_y += pairs_of(run_y);
            run_y = 1;
        }
    }
    tied_y += pairs_of(run_y);

    let numerator = n0 - tied_x - tied_y + tied_xy - 2 * swaps;
    let dx = n0 - tied_x;
    let dy = n0 - tied_y;
    if dx == 0 || dy == 0 {
        return Ok(result(None));
    }
    Ok(result(Some(numerator as f64 / ((dx * dy) as f64).sqrt())))
}

/// Sort ascending, returning the number of inversions (strictly greater
/// elements preceding smaller ones).
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as i64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k = k + mid - i;
    buf[k..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}
