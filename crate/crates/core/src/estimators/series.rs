//! Truncated lattice sums `Σ_k G(k/m) P_{k,m}(x)`.
//!
//! Each coordinate keeps `k_j ∈ [⌊λ_j − t_j⌋⁺, ⌈λ_j + t_j⌉]` where `λ_j = m_j x_j`
//! and `t_j` is the smallest radius whose Poisson tail bound is at most
//! `tail_eps / d`. The cost is the product of the box widths, so these are
//! oracles for small `d`, not an evaluation path.

use super::{check_point, empirical_cdf, Sample, SmoothingVector};
use crate::error::{usage, Result};
use crate::specialfn::{poisson_pmf, poisson_tail_radius};

/// Lattice window `k ∈ [lo, lo + weights.len())` for one coordinate with
/// the probability weight of each `k`.
pub(crate) struct Axis {
    pub lo: u64,
    pub weights: Vec<f64>,
}

pub(crate) fn check_tail_eps(tail_eps: f64) -> Result<()> {
    if !(tail_eps > 0.0 && tail_eps < 1.0) {
        return usage(format!("tail_eps must lie in (0, 1), got {tail_eps}"));
    }
    Ok(())
}

/// Truncation window for `Poi(lambda)` at per-axis tail mass `eps`.
pub(crate) fn poisson_window(lambda: f64, eps: f64) -> (u64, u64) {
    if lambda == 0.0 {
        return (0, 0);
    }
    let t = poisson_tail_radius(lambda, eps);
    ((lambda - t).floor().max(0.0) as u64, (lambda + t).ceil() as u64)
}

fn axes(m: &SmoothingVector, x: &[f64], tail_eps: f64) -> Vec<Axis> {
    let d = x.len();
    x.iter()
        .enumerate()
        .map(|(j, &xj)| {
            let lambda = m.get(j) as f64 * xj;
            let (lo, hi) = poisson_window(lambda, tail_eps / d as f64);
            Axis {
                lo,
                weights: (lo..=hi).map(|k| poisson_pmf(lambda, k)).collect(),
            }
        })
        .collect()
}

fn lattice_sum(
    m: &SmoothingVector,
    x: &[f64],
    tail_eps: f64,
    g: impl FnMut(&[f64]) -> f64,
) -> Result<f64> {
    check_tail_eps(tail_eps)?;
    Ok(lattice_sum_axes(&axes(m, x, tail_eps), m, g))
}

/// `Σ_k g(k/m) Π_j weight_j(k_j)` over the product of the axis windows.
pub(crate) fn lattice_sum_axes(
    axes: &[Axis],
    m: &SmoothingVector,
    mut g: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let d = axes.len();
    let mut idx = vec![0usize; d];
    let mut point = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for j in 0..d {
            let k = axes[j].lo + idx[j] as u64;
            point[j] = k as f64 / m.get(j) as f64;
            w *= axes[j].weights[idx[j]];
        }
        if w > 0.0 {
            total += g(&point) * w;
        }
        // odometer
        let mut j = 0;
        loop {
            if j == d {
                return total;
            }
            idx[j] += 1;
            if idx[j] < axes[j].weights.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// Lattice-sum form of the estimator, `Σ_k F_n(k/m) P_{k,m}(x)`.
pub fn sm_estimate_series(
    sample: &Sample,
    m: &SmoothingVector,
    x: &[f64],
    tail_eps: f64,
) -> Result<f64> {
    check_point(x, sample.d())?;
    if m.d() != sample.d() {
        return usage("smoothing vector and sample dimensions differ");
    }
    lattice_sum(m, x, tail_eps, |k_over_m| {
        empirical_cdf(sample, k_over_m).expect("lattice points are valid")
    })
}

/// The smoothed distribution function `F_m(x) = Σ_k F(k/m) P_{k,m}(x)`,
/// which is also `E[F̂_m(x)]`.
pub fn smoothed_operator(
    cdf: impl Fn(&[f64]) -> f64,
    m: &SmoothingVector,
    x: &[f64],
    tail_eps: f64,
) -> Result<f64> {
    check_point(x, m.d())?;
    lattice_sum(m, x, tail_eps, cdf)
}
