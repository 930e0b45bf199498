//! Checks of the asymptotic oracles in [`crate::theory`] against exact lattice
//! sums and Monte Carlo.
//!
//! Each check yields a [`CheckRow`]. Unless a check family says otherwise a
//! row passes when `|observed − predicted| ≤ tolerance`. Rows with
//! [`Outcome::Info`] are diagnostics and never fail a suite.
//!
//! | family | rule |
//! |---|---|
//! | `bias/*/rel` | leading bias within 25% of the exact smoothing bias at m = 256 |
//! | `bias/*/remainder` | `m·|F_m − F − bias|` at 256 over the same at 128 is below 1 |
//! | `bias_limit` | `256·(F_256 − F)` within 10% of `½ x F''(x)` |
//! | `variance/m=*` | empirical `n·Var` within 3 SE of `σ² − V(x; m)` |
//! | `variance/slope` | OLS slope of `n·Var` on `m^{−1/2}` within 20% of `−V(x)` |
//! | `boundary_bias/slope` | log–log slope of `|bias|` on `m` within 0.15 of −2 |
//! | `boundary_variance/*` | `n·Var` matches `σ²(λ/m)` within 3 SE; relative change below 15% |
//! | `clt/ks` | KS distance to N(0, 1) below the 1% critical value |
//! | `skellam/*` | Monte Carlo `E|K − L|` within 3 SE of `√(2/π)√(2λ)` |
//! | `deficiency/*` | `L − n` positive at each `n`, and increasing in `n` |

use std::fmt;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{usage, Result};
use crate::estimators::{sm_estimate, smoothed_operator, SmoothingVector};
use crate::models::{mix_seed, rng_from_seed, ClaytonGamma, DistributionModel, IndependentGamma};
use crate::specialfn::normal_cdf;
use crate::theory::{
    deficiency_asymptotic, deficiency_exact, exact_mean, exact_variance, interior_bias, interior_mse,
    m_opt_pointwise, InteriorExpansion, Regime,
};

pub const DEFAULT_SEED: u64 = 20250101;
const EXACT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Info,
}

impl Outcome {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Pass
        } else {
            Self::Fail
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pass => "pass",
            Self::Fail => "fail",
            Self::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub predicted: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub outcome: Outcome,
}

impl CheckRow {
    fn within(check: impl Into<String>, predicted: f64, observed: f64, tolerance: f64) -> Self {
        let ok = (observed - predicted).abs() <= tolerance;
        Self::new(check, predicted, observed, tolerance, Outcome::from_bool(ok))
    }

    fn info(check: impl Into<String>, predicted: f64, observed: f64) -> Self {
        Self::new(check, predicted, observed, f64::NAN, Outcome::Info)
    }

    fn new(check: impl Into<String>, predicted: f64, observed: f64, tolerance: f64, outcome: Outcome) -> Self {
        Self { check: check.into(), predicted, observed, tolerance, outcome }
    }

    pub fn failed(&self) -> bool {
        self.outcome == Outcome::Fail
    }
}

pub const CSV_HEADER: &str = "check,predicted,observed,tolerance,pass";

pub fn rows_csv(rows: &[CheckRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.10e},{:.10e},{:.4e},{}\n",
            r.check, r.predicted, r.observed, r.tolerance, r.outcome
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bias,
    Variance,
    Boundary,
    Clt,
    Skellam,
    Deficiency,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Self::Bias, Self::Variance, Self::Boundary, Self::Clt, Self::Skellam, Self::Deficiency];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "bias" => Self::Bias,
            "variance" => Self::Variance,
            "boundary" => Self::Boundary,
            "clt" => Self::Clt,
            "skellam" => Self::Skellam,
            "deficiency" => Self::Deficiency,
            other => {
                return usage(format!(
                    "unknown suite {other:?}; expected bias, variance, boundary, clt, skellam or deficiency"
                ))
            }
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Bias => "bias",
            Self::Variance => "variance",
            Self::Boundary => "boundary",
            Self::Clt => "clt",
            Self::Skellam => "skellam",
            Self::Deficiency => "deficiency",
        }
    }

    fn tag(self) -> u64 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u64 + 101
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckRow>> {
    let seed = mix_seed(seed, &[suite.tag()]);
    match suite {
        Suite::Bias => {
            let mut rows = bias_rows()?;
            rows.push(bias_limit_row()?);
            Ok(rows)
        }
        Suite::Variance => variance_rows(seed, VARIANCE_REPS),
        Suite::Boundary => {
            let mut rows = boundary_bias_rows()?;
            rows.extend(boundary_variance_rows(seed, BOUNDARY_REPS)?);
            Ok(rows)
        }
        Suite::Clt => clt_rows(seed, CLT_REPS),
        Suite::Skellam => skellam_rows(seed, SKELLAM_REPS),
        Suite::Deficiency => {
            let mut rows = deficiency_rows()?;
            rows.extend(deficiency_high_rows()?);
            Ok(rows)
        }
    }
}

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";")
}

/// Interior test points for each dimension.
pub fn interior_points(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![0.5], vec![1.5], vec![2.0], vec![3.0], vec![5.0]],
        _ => vec![vec![0.5, 1.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![1.5, 3.0], vec![3.0, 0.8]],
    }
}

pub const BIAS_LEVELS: [u32; 4] = [32, 64, 128, 256];

/// Leading interior bias against the exact smoothing bias for M1/M2 at
/// `d ∈ {1, 2}` over the interior test points and [`BIAS_LEVELS`].
pub fn bias_rows() -> Result<Vec<CheckRow>> {
    let models: Vec<Box<dyn DistributionModel>> = vec![
        Box::new(IndependentGamma::m1(1)),
        Box::new(ClaytonGamma::m2(1)),
        Box::new(IndependentGamma::m1(2)),
        Box::new(ClaytonGamma::m2(2)),
    ];
    let mut rows = Vec::new();
    for model in &models {
        let d = model.dim();
        for x in interior_points(d) {
            let f = model.cdf(&x);
            let tag = format!("bias/{}/d{d}/x={}", model.name(), fmt_point(&x));
            let mut residual = Vec::new();
            for &m in &BIAS_LEVELS {
                let mv = SmoothingVector::isotropic(m, d)?;
                let exact = smoothed_operator(|p| model.cdf(p), &mv, &x, EXACT_EPS)? - f;
                let lead = interior_bias(model.as_ref(), &mv, &x)?;
                rows.push(CheckRow::info(format!("{tag}/m={m}"), lead, exact));
                residual.push((m as f64 * (exact - lead)).abs());
                if m == 256 && lead.abs() > 1e-6 {
                    rows.push(CheckRow::within(format!("{tag}/rel"), lead, exact, 0.25 * lead.abs()));
                }
            }
            let k = residual.len();
            let ratio = residual[k - 1] / residual[k - 2];
            rows.push(CheckRow::new(
                format!("{tag}/remainder"),
                0.0,
                ratio,
                1.0,
                Outcome::from_bool(ratio < 1.0),
            ));
        }
    }
    Ok(rows)
}

/// `256·(F_256(2) − F(2))` for M1 at `d = 1` against `½·x·F''(x) = −e^{−2}`.
pub fn bias_limit_row() -> Result<CheckRow> {
    let model = IndependentGamma::m1(1);
    let x = [2.0];
    let m = SmoothingVector::isotropic(256, 1)?;
    let scaled = 256.0 * (smoothed_operator(|p| model.cdf(p), &m, &x, EXACT_EPS)? - model.cdf(&x));
    let limit = 0.5 * x[0] * model.partial2(0, &x);
    Ok(CheckRow::within("bias_limit/m1/d1/x=2/m=256", limit, scaled, 0.1 * limit.abs()))
}

/// Mean, unbiased variance and the standard error of that variance,
/// `√((μ₄ − s⁴)/R)`.
pub fn variance_with_se(values: &[f64]) -> (f64, f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / r;
    let var = m2 / (r - 1.0);
    let se = ((m4 - (m2 / r).powi(2)).max(0.0) / r).sqrt();
    (mean, var, se)
}

/// Ordinary least-squares slope of `y` on `t`.
pub fn ols_slope(t: &[f64], y: &[f64]) -> f64 {
    let k = t.len() as f64;
    let tm = t.iter().sum::<f64>() / k;
    let ym = y.iter().sum::<f64>() / k;
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - tm) * (b - ym)).sum();
    let sxx: f64 = t.iter().map(|a| (a - tm).powi(2)).sum();
    sxy / sxx
}

/// `F̂_m(x)` over `reps` independent samples, one row per replication and one
/// column per smoothing level (common random numbers across levels).
fn replicate_estimates(
    model: &dyn DistributionModel,
    n: usize,
    points: &[(SmoothingVector, Vec<f64>)],
    seed: u64,
    reps: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let sample = model.sample(mix_seed(seed, &[n as u64, r as u64]), n);
            points.iter().map(|(m, x)| sm_estimate(&sample, m, x)).collect()
        })
        .collect()
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

pub const VARIANCE_REPS: usize = 20_000;
pub const VARIANCE_LEVELS: [u32; 3] = [25, 100, 400];

/// `n·Var(F̂_m(1))` for M1 at `d = 1`, `n = 200`, against `σ² − V(x; m)`, and
/// the fitted coefficient of `m^{−1/2}` against `−V(x)`.
pub fn variance_rows(seed: u64, reps: usize) -> Result<Vec<CheckRow>> {
    let model = IndependentGamma::m1(1);
    let x = vec![1.0];
    let n = 200;
    let levels: Vec<SmoothingVector> =
        VARIANCE_LEVELS.iter().map(|&m| SmoothingVector::isotropic(m, 1)).collect::<Result<_>>()?;
    let points: Vec<_> = levels.iter().map(|m| (m.clone(), x.clone())).collect();
    let est = replicate_estimates(&model, n, &points, seed, reps)?;
    let e = InteriorExpansion::at(&model, &x)?;
    let nf = n as f64;
    let mut rows = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (k, m) in levels.iter().enumerate() {
        let (_, var, se) = variance_with_se(&column(&est, k));
        let observed = nf * var;
        let predicted = e.sigma2 - InteriorExpansion::v_m(&model, m, &x)?;
        let tag = format!("variance/m1/d1/x=1/m={}", m.get(0));
        rows.push(CheckRow::within(tag.clone(), predicted, observed, 3.0 * nf * se));
        rows.push(CheckRow::info(
            format!("{tag}/exact"),
            nf * exact_variance(&model, m, &x, n, EXACT_EPS)?,
            observed,
        ));
        t.push(1.0 / (m.get(0) as f64).sqrt());
        y.push(observed);
    }
    let slope = ols_slope(&t, &y);
    rows.push(CheckRow::within("variance/m1/d1/x=1/slope", -e.v, slope, 0.2 * e.v.abs()));
    Ok(rows)
}

/// Exponential(1): `F''(0) = −1`, so the boundary bias at `x = λ/m` has a
/// nonvanishing leading term `−λ/(2m²)`.
pub fn boundary_model() -> IndependentGamma {
    IndependentGamma::exponential(1)
}

pub const BOUNDARY_LAMBDA: f64 = 2.0;
pub const BOUNDARY_BIAS_LEVELS: [u32; 4] = [20, 40, 80, 160];

/// Exact smoothing bias at `x = λ/m` for the boundary model and its log–log
/// slope in `m`.
pub fn boundary_bias_rows() -> Result<Vec<CheckRow>> {
    let model = boundary_model();
    let lambda = [BOUNDARY_LAMBDA];
    let mut rows = Vec::new();
    let mut lm = Vec::new();
    let mut lb = Vec::new();
    for &m in &BOUNDARY_BIAS_LEVELS {
        let mv = SmoothingVector::isotropic(m, 1)?;
        let x = [BOUNDARY_LAMBDA / m as f64];
        let bias = exact_mean(&model, &mv, &x, EXACT_EPS)? - model.cdf(&x);
        let lead = crate::theory::boundary_bias(&model, &mv, &lambda)?;
        rows.push(CheckRow::info(format!("boundary_bias/exp/lambda=2/m={m}"), lead, bias));
        lm.push((m as f64).ln());
        lb.push(bias.abs().ln());
    }
    rows.push(CheckRow::within("boundary_bias/exp/lambda=2/slope", -2.0, ols_slope(&lm, &lb), 0.15));
    Ok(rows)
}

pub const BOUNDARY_REPS: usize = 20_000;
pub const BOUNDARY_VARIANCE_LEVELS: [u32; 2] = [50, 200];

/// Empirical `n·Var(F̂_m(λ/m))` for the boundary model at `n = 500` against
/// `σ²(λ/m)`, and its relative change between the two levels.
pub fn boundary_variance_rows(seed: u64, reps: usize) -> Result<Vec<CheckRow>> {
    let model = boundary_model();
    let n = 500;
    let nf = n as f64;
    let points: Vec<(SmoothingVector, Vec<f64>)> = BOUNDARY_VARIANCE_LEVELS
        .iter()
        .map(|&m| Ok((SmoothingVector::isotropic(m, 1)?, vec![BOUNDARY_LAMBDA / m as f64])))
        .collect::<Result<_>>()?;
    let est = replicate_estimates(&model, n, &points, seed, reps)?;
    let mut rows = Vec::new();
    let mut nvar = Vec::new();
    let mut ratio = Vec::new();
    for (k, (m, x)) in points.iter().enumerate() {
        let (_, var, se) = variance_with_se(&column(&est, k));
        let f = model.cdf(x);
        let sigma2 = f * (1.0 - f);
        let tag = format!("boundary_variance/exp/lambda=2/m={}", m.get(0));
        rows.push(CheckRow::within(tag.clone(), sigma2, nf * var, 3.0 * nf * se));
        rows.push(CheckRow::info(
            format!("{tag}/exact"),
            nf * exact_variance(&model, m, x, n, EXACT_EPS)?,
            nf * var,
        ));
        nvar.push(nf * var);
        ratio.push(nf * var / sigma2);
    }
    let change = (nvar[1] - nvar[0]).abs() / nvar[0];
    rows.push(CheckRow::new(
        "boundary_variance/exp/lambda=2/change",
        0.0,
        change,
        0.15,
        Outcome::from_bool(change < 0.15),
    ));
    rows.push(CheckRow::info(
        "boundary_variance/exp/lambda=2/ratio_change",
        0.0,
        (ratio[1] - ratio[0]).abs() / ratio[0],
    ));
    Ok(rows)
}

pub const CLT_REPS: usize = 2000;

/// `1.6276/√R`, the asymptotic one-sample Kolmogorov–Smirnov critical value
/// at level 0.01.
pub fn ks_critical_001(reps: usize) -> f64 {
    1.6276 / (reps as f64).sqrt()
}

/// `sup |F_R − Φ|` for a sample of standardised values.
pub fn ks_statistic_normal(values: &[f64]) -> f64 {
    let mut z = values.to_vec();
    z.sort_by(f64::total_cmp);
    let r = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let p = normal_cdf(v);
            (p - i as f64 / r).abs().max(((i + 1) as f64 / r - p).abs())
        })
        .fold(0.0, f64::max)
}

/// Standardised `√n(F̂ − E F̂)/σ` for M1 at `d = 2`, `x = (1, 1)`, `n = 400`,
/// `m = (15, 15)`, tested against N(0, 1). The pass row standardises by the
/// exact finite-`(n, m)` standard deviation; the limit `σ(x)` version is a
/// diagnostic.
pub fn clt_rows(seed: u64, reps: usize) -> Result<Vec<CheckRow>> {
    let model = IndependentGamma::m1(2);
    let x = vec![1.0, 1.0];
    let n = 400;
    let m = SmoothingVector::isotropic(15, 2)?;
    let mean = exact_mean(&model, &m, &x, EXACT_EPS)?;
    let sd_exact = exact_variance(&model, &m, &x, n, EXACT_EPS)?.sqrt();
    let f = model.cdf(&x);
    let sd_limit = (f * (1.0 - f) / n as f64).sqrt();
    let est = column(&replicate_estimates(&model, n, &[(m, x)], seed, reps)?, 0);
    let crit = ks_critical_001(reps);
    let z: Vec<f64> = est.iter().map(|v| (v - mean) / sd_exact).collect();
    let d = ks_statistic_normal(&z);
    let z_limit: Vec<f64> = est.iter().map(|v| (v - mean) / sd_limit).collect();
    Ok(vec![
        CheckRow::new("clt/m1/d2/x=1;1/m=15/ks", 0.0, d, crit, Outcome::from_bool(d <= crit)),
        CheckRow::info("clt/m1/d2/x=1;1/m=15/ks_limit_sigma", crit, ks_statistic_normal(&z_limit)),
        CheckRow::info("clt/m1/d2/x=1;1/m=15/sd_ratio", 1.0, sd_exact / sd_limit),
    ])
}

pub const SKELLAM_REPS: usize = 100_000;
pub const SKELLAM_LAMBDAS: [f64; 3] = [25.0, 100.0, 400.0];

/// Monte Carlo `E|K − L|` for independent `K, L ~ Poi(λ)`.
pub fn skellam_rows(seed: u64, reps: usize) -> Result<Vec<CheckRow>> {
    SKELLAM_LAMBDAS
        .iter()
        .map(|&lambda| {
            let pois = Poisson::new(lambda).map_err(|e| crate::Error::Domain(e.to_string()))?;
            let mut rng = rng_from_seed(mix_seed(seed, &[lambda as u64]));
            let draws: Vec<f64> =
                (0..reps).map(|_| (pois.sample(&mut rng) - pois.sample(&mut rng)).abs()).collect();
            let (mean, var, _) = variance_with_se(&draws);
            let se = (var / reps as f64).sqrt();
            let predicted = crate::theory::skellam_mean_abs(lambda);
            Ok(CheckRow::within(format!("skellam/lambda={lambda}"), predicted, mean, 3.0 * se))
        })
        .collect()
}

pub const DEFICIENCY_SIZES: [usize; 3] = [1_000, 10_000, 100_000];

/// `L − n` with `L = deficiency_exact(σ², MSE)` from the leading MSE of M1 at
/// `d = 1`, `x = 2`, under `m = round(c_opt n^{2/3})`.
pub fn deficiency_rows() -> Result<Vec<CheckRow>> {
    let model = IndependentGamma::m1(1);
    let x = [2.0];
    let e = InteriorExpansion::at(&model, &x)?;
    let mut rows = Vec::new();
    let mut excess = Vec::new();
    for &n in &DEFICIENCY_SIZES {
        let m_opt = m_opt_pointwise(&model, &x, n)?
            .ok_or_else(|| crate::Error::Domain("test point has no interior optimum".into()))?;
        let m = (m_opt.round() as u32).max(1);
        let mv = SmoothingVector::isotropic(m, 1)?;
        let mse = interior_mse(&model, &mv, &x, n)?;
        let l = deficiency_exact(e.sigma2, mse)?;
        let obs = l as f64 - n as f64;
        let c = m as f64 / (n as f64).powf(2.0 / 3.0);
        let pred = deficiency_asymptotic(&model, &x, n, Regime::Critical { c })?;
        rows.push(CheckRow::new(
            format!("deficiency/m1/d1/x=2/n={n}/m={m}"),
            pred,
            obs,
            0.0,
            Outcome::from_bool(obs > 0.0),
        ));
        excess.push(obs);
    }
    let increasing = excess.windows(2).filter(|w| w[1] > w[0]).count();
    let steps = excess.len() - 1;
    rows.push(CheckRow::new(
        "deficiency/m1/d1/x=2/increasing",
        steps as f64,
        increasing as f64,
        0.0,
        Outcome::from_bool(increasing == steps),
    ));
    Ok(rows)
}

/// High-smoothing regime `m = n`: the empirical CDF needs more than `n`
/// observations at every size.
pub fn deficiency_high_rows() -> Result<Vec<CheckRow>> {
    let model = IndependentGamma::m1(1);
    let x = [2.0];
    let e = InteriorExpansion::at(&model, &x)?;
    [10usize, 100, 1_000, 10_000]
        .iter()
        .map(|&n| {
            let mv = SmoothingVector::isotropic(n as u32, 1)?;
            let l = deficiency_exact(e.sigma2, interior_mse(&model, &mv, &x, n)?)?;
            let obs = l as f64 - n as f64;
            let pred = deficiency_asymptotic(&model, &x, n, Regime::High { m: n as f64 })?;
            Ok(CheckRow::new(
                format!("deficiency/m1/d1/x=2/high/n={n}"),
                pred,
                obs,
                0.0,
                Outcome::from_bool(obs > 0.0),
            ))
        })
        .collect()
}
