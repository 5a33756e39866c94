//! Small numeric helpers shared by the predictors and metrics.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by n). Zero for n <= 1.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.len() <= 1 {
        return 0.0;
    }
    // Centre on the first value first; exact zero for constant input.
    let pivot = xs[0];
    let shifted: Vec<f64> = xs.iter().map(|x| x - pivot).collect();
    let m = mean(&shifted);
    let var = shifted.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    var.sqrt()
}

/// Median with the two-middle average for even lengths. `None` when empty.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Consistency constant making the MAD an unbiased σ estimate under normality.
pub const MAD_SCALE: f64 = 1.4826;

/// Scaled median absolute deviation.
pub fn scaled_mad(xs: &[f64]) -> Option<f64> {
    let m = median(xs)?;
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).abs()).collect();
    median(&dev).map(|d| MAD_SCALE * d)
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
