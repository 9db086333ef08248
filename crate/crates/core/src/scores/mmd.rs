//! Squared maximum mean discrepancy with an RBF kernel.

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_batches(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("MMD needs two non-empty batches"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )));
    }
    let d = x[0].len();
    for v in x.iter().chain(y) {
        Error::check_dim(d, v.len())?;
    }
    Ok(())
}

/// Mean kernel value over distinct pairs of one batch; the diagonal is used
/// when the batch has a single element.
fn within(x: &[Vec<f64>], gamma: f64) -> f64 {
    let n = x.len();
    if n == 1 {
        return 1.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += (-gamma * sq_dist(&x[i], &x[j])).exp();
        }
    }
    2.0 * acc / (n * (n - 1)) as f64
}

fn cross(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64) -> f64 {
    // Summed as a symmetric double loop so that cross(x, y) == cross(y, x) bit for bit.
    let (a, b) = if x.len() <= y.len() { (x, y) } else { (y, x) };
    let mut acc = 0.0;
    for u in a {
        for v in b {
            acc += (-gamma * sq_dist(u, v)).exp();
        }
    }
    acc / (x.len() * y.len()) as f64
}

/// Unbiased squared-MMD estimate (may be negative).
///
/// A batch of size one has no distinct pairs, so its within-batch term falls
/// back to the kernel diagonal.
pub fn mmd2(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check_batches(x, y, sigma)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (wx, wy) = (within(x, gamma), within(y, gamma));
    Ok(wx + wy - 2.0 * cross(x, y, gamma))
}

/// Biased (V-statistic) squared MMD; always non-negative up to rounding.
pub fn mmd2_biased(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check_batches(x, y, sigma)?;
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let full = |a: &[Vec<f64>]| cross(a, a, gamma);
    Ok(full(x) + full(y) - 2.0 * cross(x, y, gamma))
}

/// `mmd2` clipped at zero, as used for scoring.
pub fn mmd2_score(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64) -> Result<f64> {
    Ok(mmd2(x, y, sigma)?.max(0.0))
}

/// Median pairwise Euclidean distance over the pooled batches; 1 if all
/// points coincide.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[d.len() / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}
