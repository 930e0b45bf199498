//! Data-generating models with exact distribution functions, analytic
//! partial derivatives and seeded samplers.
//!
//! * `m1`: independent Gamma(α, β) coordinates (rate parametrisation).
//! * `m2`: Clayton(θ) copula with Gamma(α, β) margins, sampled by the
//!   Marshall–Olkin frailty construction.
//!
//! Randomness comes from ChaCha8 streams. A replication's stream is seeded
//! by a SplitMix64 mix of `(master, tags…)`, so any replication can be rerun
//! in isolation and scheduling order never matters.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};
use crate::estimators::Sample;
use crate::specialfn::{gamma_cdf, gamma_pdf, gamma_pdf_deriv, gamma_quantile};

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tuple of tags into one 64-bit seed.
pub fn mix_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// A distribution on the nonnegative orthant together with what the theory
/// oracles need from it.
///
/// The `cdf`, `partial` and `partial2` methods expect points in the orthant;
/// use the free functions ([`m1_cdf`], [`m2_cdf`]) for checked evaluation.
pub trait DistributionModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn cdf(&self, x: &[f64]) -> f64;
    /// `∂F/∂x_j`.
    fn partial(&self, j: usize, x: &[f64]) -> f64;
    /// `∂²F/∂x_j²`.
    fn partial2(&self, j: usize, x: &[f64]) -> f64;
    fn sample_with(&self, rng: &mut SimRng, n: usize) -> Sample;

    fn sample(&self, seed: u64, n: usize) -> Sample {
        self.sample_with(&mut rng_from_seed(seed), n)
    }
}

fn marginal_cdf(x: f64, alpha: f64, beta: f64) -> f64 {
    gamma_cdf(x.max(0.0), alpha, beta).expect("gamma parameters validated at construction")
}

fn check_gamma(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
        return domain(format!("gamma parameters must be positive and finite, got ({alpha}, {beta})"));
    }
    Ok(())
}

/// Independent Gamma(α, β) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentGamma {
    d: usize,
    alpha: f64,
    beta: f64,
    name: String,
}

impl IndependentGamma {
    pub fn new(d: usize, alpha: f64, beta: f64) -> Result<Self> {
        if d == 0 {
            return usage("dimension must be at least 1");
        }
        check_gamma(alpha, beta)?;
        Ok(Self { d, alpha, beta, name: "m1".into() })
    }

    /// The default (M1) model: Gamma(2, 1) margins.
    pub fn m1(d: usize) -> Self {
        Self::new(d, 2.0, 1.0).expect("valid defaults")
    }

    /// Exponential(1) margins. Unlike Gamma(2, 1) its second derivative is
    /// nonzero at the origin, which makes the boundary-layer bias term
    /// visible.
    pub fn exponential(d: usize) -> Self {
        let mut m = Self::new(d, 1.0, 1.0).expect("valid defaults");
        m.name = "exp".into();
        m
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn others(&self, j: usize, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .filter(|(k, _)| *k != j)
            .map(|(_, &v)| marginal_cdf(v, self.alpha, self.beta))
            .product()
    }
}

impl DistributionModel for IndependentGamma {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn cdf(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| marginal_cdf(v, self.alpha, self.beta)).product()
    }

    fn partial(&self, j: usize, x: &[f64]) -> f64 {
        gamma_pdf(x[j], self.alpha, self.beta) * self.others(j, x)
    }

    fn partial2(&self, j: usize, x: &[f64]) -> f64 {
        gamma_pdf_deriv(x[j], self.alpha, self.beta) * self.others(j, x)
    }

    fn sample_with(&self, rng: &mut SimRng, n: usize) -> Sample {
        let g = Gamma::new(self.alpha, 1.0 / self.beta).expect("validated");
        let data = (0..n * self.d).map(|_| g.sample(rng)).collect();
        Sample::new(data, self.d).expect("gamma draws are finite and nonnegative")
    }
}

/// Clayton copula `C_θ(u) = (Σ u_j^{−θ} − d + 1)^{−1/θ}`.
///
/// A zero coordinate gives 0 (the continuous limit).
pub fn clayton_cdf(u: &[f64], theta: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return domain(format!("Clayton parameter must be positive, got {theta}"));
    }
    if let Some(v) = u.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return domain(format!("copula arguments must lie in [0, 1], got {v}"));
    }
    Ok(clayton_unchecked(u, theta))
}

fn clayton_unchecked(u: &[f64], theta: f64) -> f64 {
    if u.iter().any(|&v| v == 0.0) {
        return 0.0;
    }
    let s: f64 = u.iter().map(|&v| v.powf(-theta)).sum::<f64>() - u.len() as f64 + 1.0;
    s.powf(-1.0 / theta).clamp(0.0, 1.0)
}

/// `(∂C/∂u_j, ∂²C/∂u_j²)`, including the limits at `u_j = 0`.
fn clayton_partials(u: &[f64], j: usize, theta: f64) -> (f64, f64) {
    if u.iter().enumerate().any(|(k, &v)| k != j && v == 0.0) {
        return (0.0, 0.0);
    }
    let d = u.len() as f64;
    // R = Σ_{k≠j} u_k^{−θ} − d + 1 ≥ 0
    let rest: f64 = u
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, &v)| v.powf(-theta))
        .sum::<f64>()
        - d
        + 1.0;
    let uj = u[j];
    if uj == 0.0 {
        // C(u) ~ u_j as u_j → 0
        let second = if theta > 1.0 { 0.0 } else if theta == 1.0 { -2.0 * rest } else { f64::NEG_INFINITY };
        return (1.0, second);
    }
    let ln_u = uj.ln();
    let s = uj.powf(-theta) + rest;
    let ln_s = s.ln();
    let first = (-(theta + 1.0) * ln_u - (1.0 / theta + 1.0) * ln_s).exp();
    // (θ+1) u^{−θ−2} S^{−1/θ−2} (u^{−θ} − S), and u^{−θ} − S = −R
    let second = -(theta + 1.0) * rest * (-(theta + 2.0) * ln_u - (1.0 / theta + 2.0) * ln_s).exp();
    (first, second)
}

/// Clayton(θ) copula with Gamma(α, β) margins.
#[derive(Debug, Clone, PartialEq)]
pub struct ClaytonGamma {
    d: usize,
    alpha: f64,
    beta: f64,
    theta: f64,
}

impl ClaytonGamma {
    pub fn new(d: usize, alpha: f64, beta: f64, theta: f64) -> Result<Self> {
        if d == 0 {
            return usage("dimension must be at least 1");
        }
        check_gamma(alpha, beta)?;
        if !(theta > 0.0 && theta.is_finite()) {
            return domain(format!("Clayton parameter must be positive, got {theta}"));
        }
        Ok(Self { d, alpha, beta, theta })
    }

    /// The default (M2) model: θ = 2, Gamma(2, 1) margins.
    pub fn m2(d: usize) -> Self {
        Self::new(d, 2.0, 1.0, 2.0).expect("valid defaults")
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    fn margins(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| marginal_cdf(v, self.alpha, self.beta)).collect()
    }
}

impl DistributionModel for ClaytonGamma {
    fn name(&self) -> &str {
        "m2"
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn cdf(&self, x: &[f64]) -> f64 {
        clayton_unchecked(&self.margins(x), self.theta)
    }

    fn partial(&self, j: usize, x: &[f64]) -> f64 {
        let (cj, _) = clayton_partials(&self.margins(x), j, self.theta);
        cj * gamma_pdf(x[j], self.alpha, self.beta)
    }

    fn partial2(&self, j: usize, x: &[f64]) -> f64 {
        let (cj, cjj) = clayton_partials(&self.margins(x), j, self.theta);
        let g = gamma_pdf(x[j], self.alpha, self.beta);
        let dg = gamma_pdf_deriv(x[j], self.alpha, self.beta);
        if x[j] == 0.0 {
            // the C_jj g² term vanishes in the limit for these margins
            return cj * dg;
        }
        cjj * g * g + cj * dg
    }

    /// Marshall–Olkin: `V ~ Gamma(1/θ, 1)`, `E_j ~ Exp(1)`,
    /// `U_j = (1 + E_j/V)^{−1/θ}`, `X_j = F_Γ^{−1}(U_j)`.
    fn sample_with(&self, rng: &mut SimRng, n: usize) -> Sample {
        let frailty = Gamma::new(1.0 / self.theta, 1.0).expect("validated");
        let top = 1.0 - f64::EPSILON;
        let mut data = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let v: f64 = frailty.sample(rng);
            for _ in 0..self.d {
                let e: f64 = Exp1.sample(rng);
                let u = (-(e / v).ln_1p() / self.theta).exp().min(top);
                data.push(gamma_quantile(u, self.alpha, self.beta).expect("u in [0, 1)"));
            }
        }
        Sample::new(data, self.d).expect("quantiles are finite and nonnegative")
    }
}

fn check_orthant(x: &[f64]) -> Result<()> {
    if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
        return domain(format!("model CDF needs coordinates ≥ 0, got {v}"));
    }
    Ok(())
}

/// `Π_j F_Γ(x_j; 2, 1)`.
pub fn m1_cdf(x: &[f64]) -> Result<f64> {
    check_orthant(x)?;
    Ok(IndependentGamma::m1(x.len()).cdf(x))
}

/// `C_2(F_Γ(x_1; 2, 1), …)`.
pub fn m2_cdf(x: &[f64]) -> Result<f64> {
    check_orthant(x)?;
    Ok(ClaytonGamma::m2(x.len()).cdf(x))
}

/// Both partial derivatives of coordinate `j` at once.
pub fn model_partials(model: &dyn DistributionModel, j: usize, x: &[f64]) -> Result<(f64, f64)> {
    if j >= model.dim() || x.len() != model.dim() {
        return usage(format!("coordinate {j} / point of length {} for a {}-d model", x.len(), model.dim()));
    }
    check_orthant(x)?;
    Ok((model.partial(j, x), model.partial2(j, x)))
}

pub fn sample_model(model: &dyn DistributionModel, seed: u64, n: usize) -> Result<Sample> {
    if n == 0 {
        return usage("sample size must be at least 1");
    }
    Ok(model.sample(seed, n))
}

/// Model selection by name, as used in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    M1,
    M2,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            other => usage(format!("unknown model {other:?}; expected m1 or m2")),
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            Self::M1 => 1,
            Self::M2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::M1 => "m1",
            Self::M2 => "m2",
        }
    }
}

/// Parameters for building a model by name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self { d: 2, alpha: 2.0, beta: 1.0, theta: 2.0 }
    }
}

pub fn build_model(kind: ModelKind, p: &ModelParams) -> Result<Box<dyn DistributionModel>> {
    Ok(match kind {
        ModelKind::M1 => Box::new(IndependentGamma::new(p.d, p.alpha, p.beta)?),
        ModelKind::M2 => Box::new(ClaytonGamma::new(p.d, p.alpha, p.beta, p.theta)?),
    })
}

/// Draw a uniform point in `[lo, hi]^d`; used by tests and validation.
pub fn uniform_point(rng: &mut SimRng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(lo..=hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn m1_examples() {
        assert_eq!(m1_cdf(&[0.0, 3.0]).unwrap(), 0.0);
        let g = 1.0 - 2.0 / E;
        assert!((m1_cdf(&[1.0, 1.0]).unwrap() - g * g).abs() < 1e-15);
        assert!((m1_cdf(&[1.0, 1.0]).unwrap() - 0.069_823_4).abs() < 1e-7);
        assert!((m1_cdf(&[1.0]).unwrap() - g).abs() < 1e-15);
        assert!(m1_cdf(&[-1.0]).is_err());
    }

    #[test]
    fn clayton_examples() {
        assert_eq!(clayton_cdf(&[1.0, 1.0, 1.0], 2.0).unwrap(), 1.0);
        for v in [0.1, 0.5, 0.93] {
            assert!((clayton_cdf(&[v, 1.0], 2.0).unwrap() - v).abs() < 1e-15);
        }
        let c = clayton_cdf(&[0.5, 0.5], 2.0).unwrap();
        assert!((c - 7f64.powf(-0.5)).abs() < 1e-15);
        assert!((c - 0.377_964_5).abs() < 1e-7);
        assert_eq!(clayton_cdf(&[0.0, 0.4], 2.0).unwrap(), 0.0);
        assert!(clayton_cdf(&[1.2, 0.4], 2.0).is_err());
    }

    #[test]
    fn m2_examples() {
        assert_eq!(m2_cdf(&[0.0, 1.0]).unwrap(), 0.0);
        let g = 1.0 - 2.0 / E;
        let want = (2.0 / (g * g) - 1.0).powf(-0.5);
        let got = m2_cdf(&[1.0, 1.0]).unwrap();
        assert!((got - want).abs() < 1e-14);
        assert!((got - 0.190_2).abs() < 1e-4);
        assert!((m2_cdf(&[60.0, 60.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m1_partials_examples() {
        let m = IndependentGamma::m1(1);
        let (a, b) = model_partials(&m, 0, &[1.0]).unwrap();
        assert!((a - 1.0 / E).abs() < 1e-15);
        assert!(b.abs() < 1e-15);
        assert!((m.partial2(0, &[2.0]) + (-2.0f64).exp()).abs() < 1e-15);
        // one-sided limits at the boundary
        assert!((m.partial2(0, &[0.0]) - 1.0).abs() < 1e-14);
        let e = IndependentGamma::exponential(1);
        assert!((e.partial2(0, &[0.0]) + 1.0).abs() < 1e-14);
        assert!(model_partials(&m, 1, &[1.0]).is_err());
    }

    fn fd_first(model: &dyn DistributionModel, j: usize, x: &[f64], h: f64) -> f64 {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[j] += h;
        b[j] -= h;
        (model.cdf(&a) - model.cdf(&b)) / (2.0 * h)
    }

    fn fd_second(model: &dyn DistributionModel, j: usize, x: &[f64], h: f64) -> f64 {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[j] += h;
        b[j] -= h;
        (model.cdf(&a) - 2.0 * model.cdf(x) + model.cdf(&b)) / (h * h)
    }

    #[test]
    fn partials_match_finite_differences() {
        let models: [Box<dyn DistributionModel>; 2] =
            [Box::new(IndependentGamma::m1(2)), Box::new(ClaytonGamma::m2(2))];
        let mut rng = rng_from_seed(11);
        for model in &models {
            for _ in 0..200 {
                let x = uniform_point(&mut rng, 2, 0.1, 10.0);
                for j in 0..2 {
                    let exact = model.partial(j, &x);
                    let fd = fd_first(model.as_ref(), j, &x, 1e-4);
                    let scale = exact.abs().max(1e-6);
                    assert!((exact - fd).abs() / scale < 1e-5, "{} j={j} x={x:?}", model.name());
                }
            }
            // second derivatives are noisier under differencing; use a
            // larger step on the well-conditioned part of the region
            for _ in 0..100 {
                let x = uniform_point(&mut rng, 2, 0.1, 5.0);
                for j in 0..2 {
                    let exact = model.partial2(j, &x);
                    let fd = fd_second(model.as_ref(), j, &x, 1e-3);
                    assert!((exact - fd).abs() < 1e-5 + 1e-4 * exact.abs(), "{} j={j} x={x:?}: {exact} vs {fd}", model.name());
                }
            }
        }
    }

    #[test]
    fn clayton_boundary_limits() {
        let m = ClaytonGamma::m2(2);
        // F(0, y) = 0 along the face, and its x-derivative is 0 for α = 2
        assert_eq!(m.partial(0, &[0.0, 1.5]), 0.0);
        let lim = m.partial2(0, &[0.0, 1.5]);
        let near = m.partial2(0, &[1e-4, 1.5]);
        assert!((lim - 1.0).abs() < 1e-12);
        assert!((near - lim).abs() < 1e-2);
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = ClaytonGamma::m2(2);
        assert_eq!(m.sample(99, 50), m.sample(99, 50));
        assert_ne!(m.sample(99, 50), m.sample(100, 50));
        assert_ne!(mix_seed(1, &[2, 3]), mix_seed(1, &[3, 2]));
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!(ModelKind::parse("M2").unwrap(), ModelKind::M2);
        assert!(ModelKind::parse("m3").is_err());
        let m = build_model(ModelKind::M1, &ModelParams::default()).unwrap();
        assert_eq!((m.name(), m.dim()), ("m1", 2));
    }
}
