//! Leading-order asymptotics of the estimator: interior bias and variance,
//! optimal smoothing, deficiency of the empirical CDF, and the boundary
//! layer `x = λ/m`.
//!
//! Everything here uses the analytic partials of a [`DistributionModel`].
//! The exact finite-`(n, m)` moments at the bottom are lattice sums and back
//! the Monte Carlo checks in [`crate::validation`].

use std::f64::consts::PI;

use crate::error::{domain, usage, Result};
use crate::estimators::series::{check_tail_eps, lattice_sum_axes, poisson_window, Axis};
use crate::estimators::{smoothed_operator, SmoothingVector};
use crate::lscv::{qmc_grid, EvaluationGrid, IntegrationRegion, QmcKind};
use crate::models::DistributionModel;
use crate::specialfn::poisson_tail;

fn check_dims(model: &dyn DistributionModel, m: Option<&SmoothingVector>, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return usage(format!("point has {} coordinates, model has {}", x.len(), model.dim()));
    }
    if let Some(m) = m {
        if m.d() != model.dim() {
            return usage(format!("smoothing vector has {} coordinates, model has {}", m.d(), model.dim()));
        }
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return domain(format!("coordinates must be finite and ≥ 0, got {v}"));
    }
    Ok(())
}

/// `σ²(x) = F(1 − F)`, `V(x) = Σ_j ∂_jF √(x_j/π)` and
/// `B(x) = ½ Σ_j x_j ∂²_jF` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteriorExpansion {
    pub sigma2: f64,
    pub v: f64,
    pub b: f64,
}

impl InteriorExpansion {
    pub fn at(model: &dyn DistributionModel, x: &[f64]) -> Result<Self> {
        check_dims(model, None, x)?;
        let f = model.cdf(x);
        let mut v = 0.0;
        let mut b = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            v += model.partial(j, x) * (xj / PI).sqrt();
            b += 0.5 * xj * model.partial2(j, x);
        }
        Ok(Self { sigma2: f * (1.0 - f), v, b })
    }

    /// `V(x; m) = Σ_j m_j^{−1/2} ∂_jF √(x_j/π)` needs the per-coordinate
    /// terms, so it is computed from the model rather than from `v`.
    pub fn v_m(model: &dyn DistributionModel, m: &SmoothingVector, x: &[f64]) -> Result<f64> {
        check_dims(model, Some(m), x)?;
        Ok(x.iter()
            .enumerate()
            .map(|(j, &xj)| model.partial(j, x) * (xj / PI).sqrt() / (m.get(j) as f64).sqrt())
            .sum())
    }
}

/// `½ Σ_j (x_j/m_j) ∂²_jF(x)`.
pub fn interior_bias(model: &dyn DistributionModel, m: &SmoothingVector, x: &[f64]) -> Result<f64> {
    check_dims(model, Some(m), x)?;
    Ok(x.iter()
        .enumerate()
        .map(|(j, &xj)| 0.5 * xj / m.get(j) as f64 * model.partial2(j, x))
        .sum())
}

/// `n⁻¹ σ²(x) − n⁻¹ V(x; m)`.
pub fn interior_variance(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    n: usize,
) -> Result<f64> {
    check_n(n)?;
    let e = InteriorExpansion::at(model, x)?;
    let vm = InteriorExpansion::v_m(model, m, x)?;
    Ok((e.sigma2 - vm) / n as f64)
}

/// Leading-order MSE, `interior_variance + interior_bias²`.
pub fn interior_mse(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    n: usize,
) -> Result<f64> {
    let b = interior_bias(model, m, x)?;
    Ok(interior_variance(model, m, x, n)? + b * b)
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return usage("sample size must be positive");
    }
    Ok(())
}

/// `n^{2/3} (4B²/V)^{2/3}`, or `None` when the MSE has no interior minimum
/// in `m` (`B = 0` or `V ≤ 0`).
pub fn m_opt_formula(v: f64, b: f64, n: usize) -> Option<f64> {
    if b == 0.0 || v <= 0.0 || !v.is_finite() || !b.is_finite() {
        return None;
    }
    Some((n as f64).powf(2.0 / 3.0) * (4.0 * b * b / v).powf(2.0 / 3.0))
}

/// Pointwise MSE-optimal smoothing level; `None` signals no optimum.
pub fn m_opt_pointwise(model: &dyn DistributionModel, x: &[f64], n: usize) -> Result<Option<f64>> {
    check_n(n)?;
    let e = InteriorExpansion::at(model, x)?;
    Ok(m_opt_formula(e.v, e.b, n))
}

/// `∫σ²`, `∫V` and `∫B²` over a region, as QMC sums on a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedExpansion {
    pub sigma2: f64,
    pub v: f64,
    pub b2: f64,
}

impl IntegratedExpansion {
    pub fn on_grid(model: &dyn DistributionModel, grid: &EvaluationGrid) -> Result<Self> {
        if grid.d() != model.dim() {
            return usage("model and grid dimensions differ");
        }
        let mut acc = Self { sigma2: 0.0, v: 0.0, b2: 0.0 };
        for x in grid.points() {
            let e = InteriorExpansion::at(model, x)?;
            acc.sigma2 += e.sigma2;
            acc.v += e.v;
            acc.b2 += e.b * e.b;
        }
        let w = grid.cell_weight();
        Ok(Self { sigma2: w * acc.sigma2, v: w * acc.v, b2: w * acc.b2 })
    }
}

/// IMSE-optimal isotropic level `n^{2/3} (4∫B²/∫V)^{2/3}` with the integrals
/// taken on the default 4096-point Sobol grid of the region.
pub fn m_opt_integrated(
    model: &dyn DistributionModel,
    region: IntegrationRegion,
    n: usize,
) -> Result<Option<f64>> {
    let grid = qmc_grid(region, 4096, QmcKind::Sobol, None)?;
    m_opt_integrated_on(model, &grid, n)
}

pub fn m_opt_integrated_on(
    model: &dyn DistributionModel,
    grid: &EvaluationGrid,
    n: usize,
) -> Result<Option<f64>> {
    check_n(n)?;
    let ie = IntegratedExpansion::on_grid(model, grid)?;
    Ok(m_opt_formula(ie.v, ie.b2.sqrt(), n))
}

/// Smallest `k` with `σ²/k ≤ mse_sm`: the sample size at which the empirical
/// CDF matches the given MSE.
pub fn deficiency_exact(sigma2: f64, mse_sm: f64) -> Result<u64> {
    if !(mse_sm > 0.0 && mse_sm.is_finite()) {
        return domain(format!("MSE must be positive and finite, got {mse_sm}"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return domain(format!("σ² must be positive and finite, got {sigma2}"));
    }
    let ratio = sigma2 / mse_sm;
    if ratio > 1e15 {
        return domain(format!("deficiency {ratio:e} is beyond integer range"));
    }
    let mut k = (ratio.ceil() as u64).max(1);
    while k > 1 && sigma2 / (k - 1) as f64 <= mse_sm {
        k -= 1;
    }
    while sigma2 / k as f64 > mse_sm {
        k += 1;
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `m ≫ n^{2/3}`: bias is negligible and `L − n ≈ (n/√m) V/σ²`.
    High { m: f64 },
    /// `m = c·n^{2/3}`: `L − n ≈ n^{2/3} (c^{−1/2} V − c^{−2} B²)/σ²`.
    Critical { c: f64 },
}

fn deficiency_leading(sigma2: f64, v: f64, b2: f64, n: usize, regime: Regime) -> Result<f64> {
    check_n(n)?;
    if !(sigma2 > 0.0) {
        return domain("deficiency needs σ² > 0");
    }
    let nf = n as f64;
    match regime {
        Regime::High { m } => {
            if !(m > 0.0 && m.is_finite()) {
                return usage(format!("high regime needs m > 0, got {m}"));
            }
            Ok(nf / m.sqrt() * v / sigma2)
        }
        Regime::Critical { c } => {
            if !(c > 0.0 && c.is_finite()) {
                return usage(format!("critical regime needs c > 0, got {c}"));
            }
            Ok(nf.powf(2.0 / 3.0) * (v / c.sqrt() - b2 / (c * c)) / sigma2)
        }
    }
}

/// Leading-order local deficiency `L(n, x) − n`.
pub fn deficiency_asymptotic(
    model: &dyn DistributionModel,
    x: &[f64],
    n: usize,
    regime: Regime,
) -> Result<f64> {
    let e = InteriorExpansion::at(model, x)?;
    deficiency_leading(e.sigma2, e.v, e.b * e.b, n, regime)
}

/// Leading-order global deficiency `G_S(n) − n` from integrated ratios.
pub fn deficiency_asymptotic_global(ie: &IntegratedExpansion, n: usize, regime: Regime) -> Result<f64> {
    deficiency_leading(ie.sigma2, ie.v, ie.b2, n, regime)
}

fn check_lambda(model: &dyn DistributionModel, m: &SmoothingVector, lambda: &[f64]) -> Result<Vec<f64>> {
    check_dims(model, Some(m), lambda)?;
    Ok(lambda.iter().enumerate().map(|(j, &l)| l / m.get(j) as f64).collect())
}

/// Boundary-layer point `x = λ/m` with its leading bias coefficient
/// `½ Σ_j λ_j m_j^{−2} ∂²_jF(x^{(j,0)})`, where `x^{(j,0)}` zeroes coordinate j.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryExpansion {
    pub lambda: Vec<f64>,
    pub m: SmoothingVector,
    pub x: Vec<f64>,
    pub bias_coeff: f64,
}

impl BoundaryExpansion {
    pub fn new(model: &dyn DistributionModel, m: &SmoothingVector, lambda: &[f64]) -> Result<Self> {
        let x = check_lambda(model, m, lambda)?;
        let mut bias = 0.0;
        let mut face = x.clone();
        for (j, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            face[j] = 0.0;
            let mj = m.get(j) as f64;
            bias += 0.5 * l / (mj * mj) * model.partial2(j, &face);
            face[j] = x[j];
        }
        Ok(Self { lambda: lambda.to_vec(), m: m.clone(), x, bias_coeff: bias })
    }
}

pub fn boundary_bias(model: &dyn DistributionModel, m: &SmoothingVector, lambda: &[f64]) -> Result<f64> {
    Ok(BoundaryExpansion::new(model, m, lambda)?.bias_coeff)
}

/// `n⁻¹ σ²(λ/m)`.
pub fn boundary_variance(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    lambda: &[f64],
    n: usize,
) -> Result<f64> {
    check_n(n)?;
    let x = check_lambda(model, m, lambda)?;
    let f = model.cdf(&x);
    Ok(f * (1.0 - f) / n as f64)
}

pub fn boundary_mse(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    lambda: &[f64],
    n: usize,
) -> Result<f64> {
    let b = boundary_bias(model, m, lambda)?;
    Ok(boundary_variance(model, m, lambda, n)? + b * b)
}

/// Exact `E[F̂_m(x)] = Σ_k F(k/m) P_{k,m}(x)`.
pub fn exact_mean(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    tail_eps: f64,
) -> Result<f64> {
    check_dims(model, Some(m), x)?;
    smoothed_operator(|p| model.cdf(p), m, x, tail_eps)
}

/// Exact `E[ψ_1(x)²] = E[F((K ∧ L)/m)]` with `K, L` independent
/// `Poi(m ∘ x)` vectors, since `ψ² = Π_j P(K_j ∧ L_j ≥ W_j)`.
pub fn exact_second_moment(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    tail_eps: f64,
) -> Result<f64> {
    check_dims(model, Some(m), x)?;
    check_tail_eps(tail_eps)?;
    let d = x.len() as f64;
    let mut axes = Vec::with_capacity(x.len());
    for (j, &xj) in x.iter().enumerate() {
        let lambda = m.get(j) as f64 * xj;
        let (lo, hi) = poisson_window(lambda, tail_eps / (2.0 * d));
        let mut weights = Vec::with_capacity((hi - lo + 1) as usize);
        let mut upper = poisson_tail(lambda, lo)?.powi(2);
        for k in lo..=hi {
            let next = poisson_tail(lambda, k + 1)?.powi(2);
            weights.push(upper - next);
            upper = next;
        }
        // mass of the min below the window is folded into its first cell
        weights[0] += 1.0 - poisson_tail(lambda, lo)?.powi(2);
        axes.push(Axis { lo, weights });
    }
    Ok(lattice_sum_axes(&axes, m, |p| model.cdf(p)))
}

/// Exact `Var(F̂_m(x)) = n⁻¹ (E[ψ²] − E[ψ]²)` for a sample of size `n`.
pub fn exact_variance(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    n: usize,
    tail_eps: f64,
) -> Result<f64> {
    check_n(n)?;
    let mean = exact_mean(model, m, x, tail_eps)?;
    let second = exact_second_moment(model, m, x, tail_eps)?;
    Ok(((second - mean * mean) / n as f64).max(0.0))
}

/// Exact MSE of `F̂_m(x)`.
pub fn exact_mse(
    model: &dyn DistributionModel,
    m: &SmoothingVector,
    x: &[f64],
    n: usize,
    tail_eps: f64,
) -> Result<f64> {
    let bias = exact_mean(model, m, x, tail_eps)? - model.cdf(x);
    Ok(exact_variance(model, m, x, n, tail_eps)? + bias * bias)
}

/// `√(2/π)·√(2λ)`, the large-λ mean of `|K − L|` for independent `Poi(λ)`.
pub fn skellam_mean_abs(lambda: f64) -> f64 {
    (2.0 / PI).sqrt() * (2.0 * lambda).sqrt()
}
