//! Small summary statistics shared by the samplers, losses and tests.

use crate::error::{Error, Result};

/// Pairwise (tree) sum; the grouping depends only on the slice length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    let sq: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (v.len() as f64 - 1.0)
}

/// Standard error of the mean.
pub fn std_error(v: &[f64]) -> f64 {
    (variance(v) / v.len() as f64).sqrt()
}

/// Percentile `p ∈ [0, 1]` of sorted data, interpolating linearly between
/// order statistics at rank `p (N − 1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("percentile of empty data".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("percentile level {p} outside [0, 1]")));
    }
    let r = p * (sorted.len() - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    Ok(sorted[lo] + (r - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Percentile of unsorted data.
pub fn percentile(v: &[f64], p: f64) -> Result<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    percentile_sorted(&s, p)
}

pub fn median(v: &[f64]) -> Result<f64> {
    percentile(v, 0.5)
}
