//! Least-squares cross-validation for the smoothing vector, and QMC
//! integrated squared error.
//!
//! The search is an isotropic pilot scan followed by coordinate-wise passes
//! over `{m_min, …, m_max(n)}`. Scores are memoised per vector, so revisiting
//! a vector returns the same value and the trace is nonincreasing. Ties go to
//! the smallest level.

mod grid;
mod kernel;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use grid::{qmc_grid, EvaluationGrid, IntegrationRegion, QmcKind, SOBOL_MAX_DIM};
pub use kernel::{GridKernel, ScanContext};

use crate::error::{usage, Result};
use crate::estimators::{Sample, SmoothingVector};
use crate::models::DistributionModel;

/// Search range `{m_min, …, m_max(n)}` with
/// `m_max(n) = min(⌊c·n^{2/3}⌋, m_cap, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchDomain {
    pub m_min: u32,
    pub c: f64,
    pub m_cap: u32,
    pub passes: usize,
}

impl Default for SearchDomain {
    fn default() -> Self {
        Self { m_min: 5, c: 3.0, m_cap: 500, passes: 2 }
    }
}

impl SearchDomain {
    pub fn m_max(&self, n: usize) -> u32 {
        // the nudge keeps exact cubes such as n = 1000 from rounding down
        let growth = (self.c * (n as f64).powf(2.0 / 3.0) + 1e-9).floor();
        let growth = if growth >= u32::MAX as f64 { u32::MAX } else { growth.max(0.0) as u32 };
        growth.min(self.m_cap).min(n.min(u32::MAX as usize) as u32)
    }

    pub fn range(&self, n: usize) -> Result<std::ops::RangeInclusive<u32>> {
        if self.m_min == 0 {
            return usage("m_min must be at least 1");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return usage(format!("m_max growth constant must be positive, got {}", self.c));
        }
        let hi = self.m_max(n);
        if hi < self.m_min {
            return usage(format!(
                "empty search range: m_min = {} exceeds m_max({n}) = {hi}",
                self.m_min
            ));
        }
        Ok(self.m_min..=hi)
    }
}

/// A score evaluation recorded during the search.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub stage: Stage,
    pub m: SmoothingVector,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pilot,
    Coordinate { pass: usize, j: usize },
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Pilot => f.write_str("pilot"),
            Stage::Coordinate { pass, j } => write!(f, "pass{}_coord{}", pass + 1, j + 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub m: SmoothingVector,
    pub score: f64,
    /// Best score after the pilot and after each coordinate scan.
    pub path: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

/// `LSCV(m)` on the grid.
pub fn lscv_score(sample: &Sample, m: &SmoothingVector, grid: &EvaluationGrid) -> Result<f64> {
    if sample.n() < 2 {
        return usage("cross-validation needs at least two observations");
    }
    if m.d() != sample.d() {
        return usage("smoothing vector and sample dimensions differ");
    }
    Ok(GridKernel::new(sample, grid)?.score(m))
}

pub fn select_m(sample: &Sample, grid: &EvaluationGrid, domain: &SearchDomain) -> Result<Selection> {
    if sample.n() < 2 {
        return usage("cross-validation needs at least two observations");
    }
    let kernel = GridKernel::new(sample, grid)?;
    select_with_kernel(&kernel, sample.d(), domain)
}

pub fn select_with_kernel(
    kernel: &GridKernel<'_>,
    d: usize,
    domain: &SearchDomain,
) -> Result<Selection> {
    let range = domain.range(kernel.n())?;
    let mut memo: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut trace = Vec::new();

    let levels: Vec<u32> = range.collect();
    let pilots: Vec<SmoothingVector> = levels
        .iter()
        .map(|&l| SmoothingVector::isotropic(l, d))
        .collect::<Result<_>>()?;
    let pilot_scores = kernel.scores(&pilots);
    let mut best: Option<(u32, f64)> = None;
    for (m, s) in pilots.into_iter().zip(pilot_scores) {
        let level = m.get(0);
        memo.insert(m.as_slice().to_vec(), s);
        trace.push(TraceEntry { stage: Stage::Pilot, m, score: s });
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((level, s));
        }
    }
    let (pilot, mut current_score) = best.expect("nonempty range");
    let mut current = SmoothingVector::isotropic(pilot, d)?;
    let mut path = vec![current_score];

    if d > 1 {
        for pass in 0..domain.passes {
            for j in 0..d {
                let stage = Stage::Coordinate { pass, j };
                let missing: Vec<u32> = levels
                    .iter()
                    .copied()
                    .filter(|&l| !memo.contains_key(current.with(j, l).as_slice()))
                    .collect();
                if !missing.is_empty() {
                    let ctx = kernel.scan_context(&current, j);
                    for (l, s) in missing.iter().zip(kernel.scan_scores(&ctx, &missing)) {
                        memo.insert(current.with(j, *l).as_slice().to_vec(), s);
                    }
                }
                let mut best: Option<(u32, f64)> = None;
                for &level in &levels {
                    let cand = current.with(j, level);
                    let s = memo[cand.as_slice()];
                    trace.push(TraceEntry { stage, m: cand, score: s });
                    if best.is_none_or(|(_, b)| s < b) {
                        best = Some((level, s));
                    }
                }
                let (level, s) = best.expect("nonempty range");
                current = current.with(j, level);
                current_score = s;
                path.push(current_score);
            }
        }
    }
    Ok(Selection { m: current, score: current_score, path, trace })
}

/// `ISE = |S_δ|/G · Σ_g (F̂(x_g) − F(x_g))²` for a precomputed truth vector.
pub fn ise_from_values(estimate: &[f64], truth: &[f64], cell_weight: f64) -> f64 {
    cell_weight
        * estimate
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
}

/// QMC integrated squared error of an arbitrary estimate against a model.
pub fn ise(
    estimate: impl Fn(&[f64]) -> Result<f64>,
    model: &dyn DistributionModel,
    grid: &EvaluationGrid,
) -> Result<f64> {
    if model.dim() != grid.d() {
        return usage("model and grid dimensions differ");
    }
    let mut acc = 0.0;
    for x in grid.points() {
        let e = estimate(x)? - model.cdf(x);
        acc += e * e;
    }
    Ok(grid.cell_weight() * acc)
}

/// Model CDF at every grid point.
pub fn truth_on_grid(model: &dyn DistributionModel, grid: &EvaluationGrid) -> Vec<f64> {
    grid.points().map(|x| model.cdf(x)).collect()
}

/// `F̂_m(x_g)` at every grid point through the banded kernel.
pub fn estimates_on_grid(
    sample: &Sample,
    m: &SmoothingVector,
    grid: &EvaluationGrid,
) -> Result<Vec<f64>> {
    if m.d() != sample.d() {
        return usage("smoothing vector and sample dimensions differ");
    }
    Ok(GridKernel::new(sample, grid)?.estimates(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{empirical_cdf, loo_estimate, sm_estimate};
    use crate::models::{sample_model, ClaytonGamma, IndependentGamma};

    /// Direct definition: `w Σ_g F̂² − (2/n) Σ_i w Σ_g F̂^(−i)(x_g) 1{X_i ≤ x_g}`,
    /// with every leave-one-out estimate recomputed from the reduced sample.
    fn naive_score(sample: &Sample, m: &SmoothingVector, grid: &EvaluationGrid) -> f64 {
        let n = sample.n();
        let w = grid.cell_weight();
        let mut t1 = 0.0;
        for x in grid.points() {
            let f = sm_estimate(sample, m, x).unwrap();
            t1 += f * f;
        }
        let mut t2 = 0.0;
        for i in 0..n {
            let reduced = sample.without(i).unwrap();
            let xi = sample.row(i);
            for x in grid.points() {
                if xi.iter().zip(x).all(|(a, b)| a <= b) {
                    t2 += sm_estimate(&reduced, m, x).unwrap();
                }
            }
        }
        w * t1 - 2.0 / n as f64 * w * t2
    }

    fn small_grid(g: usize, d: usize) -> EvaluationGrid {
        qmc_grid(IntegrationRegion::new(0.1, d).unwrap(), g, QmcKind::Sobol, None).unwrap()
    }

    #[test]
    fn m_max_examples() {
        let dom = SearchDomain::default();
        assert_eq!(dom.m_max(25), 25);
        assert_eq!(dom.m_max(100), 64);
        assert_eq!(dom.m_max(400), 162);
        assert_eq!(dom.m_max(1000), 300);
        assert_eq!(dom.range(25).unwrap(), 5..=25);
        assert_eq!(dom.m_max(1_000_000), 500);
        assert!(dom.range(3).is_err());
        assert!(SearchDomain { m_min: 30, ..dom }.range(25).is_err());
    }

    #[test]
    fn score_matches_naive_definition() {
        let model = ClaytonGamma::m2(2);
        for (seed, n, g) in [(1, 6, 32), (2, 10, 64), (3, 2, 16)] {
            let s = sample_model(&model, seed, n).unwrap();
            let grid = small_grid(g, 2);
            for mv in [[3, 3], [5, 11], [17, 4]] {
                let m = SmoothingVector::new(mv.to_vec()).unwrap();
                let fast = lscv_score(&s, &m, &grid).unwrap();
                let slow = naive_score(&s, &m, &grid);
                assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn scan_score_matches_full_score() {
        let s = sample_model(&ClaytonGamma::m2(3), 5, 9).unwrap();
        let grid = small_grid(48, 3);
        let k = GridKernel::new(&s, &grid).unwrap();
        let m = SmoothingVector::new(vec![4, 9, 6]).unwrap();
        let ctx = k.scan_context(&m, 1);
        for level in [3, 9, 20] {
            let full = k.score(&m.with(1, level));
            let fast = k.scan_score(&ctx, level);
            assert!((fast - full).abs() < 1e-13 * full.abs(), "{fast} vs {full}");
        }
    }

    #[test]
    fn grid_estimates_match_pointwise() {
        let s = sample_model(&IndependentGamma::m1(2), 8, 15).unwrap();
        let grid = small_grid(40, 2);
        let m = SmoothingVector::new(vec![7, 19]).unwrap();
        let fast = estimates_on_grid(&s, &m, &grid).unwrap();
        for (g, x) in grid.points().enumerate() {
            assert!((fast[g] - sm_estimate(&s, &m, x).unwrap()).abs() < 1e-13);
        }
        let k = GridKernel::new(&s, &grid).unwrap();
        for (g, x) in grid.points().enumerate() {
            assert_eq!(k.ecdf()[g], empirical_cdf(&s, x).unwrap());
        }
        // leave-one-out through the identity agrees with the direct helper
        let x = grid.point(3);
        let direct = loo_estimate(2, &s, &m, x).unwrap();
        let reduced = sm_estimate(&s.without(2).unwrap(), &m, x).unwrap();
        assert!((direct - reduced).abs() < 1e-14);
    }

    #[test]
    fn permutation_invariance() {
        let s = sample_model(&ClaytonGamma::m2(2), 11, 12).unwrap();
        let mut rows: Vec<Vec<f64>> = s.rows().map(|r| r.to_vec()).collect();
        rows.reverse();
        rows.swap(0, 5);
        let p = Sample::from_rows(&rows).unwrap();
        let grid = small_grid(64, 2);
        let m = SmoothingVector::new(vec![6, 10]).unwrap();
        let a = lscv_score(&s, &m, &grid).unwrap();
        let b = lscv_score(&p, &m, &grid).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_selection_is_the_pilot() {
        let s = sample_model(&IndependentGamma::m1(1), 4, 30).unwrap();
        let grid = small_grid(128, 1);
        let dom = SearchDomain::default();
        let sel = select_m(&s, &grid, &dom).unwrap();
        let pilot = sel
            .trace
            .iter()
            .filter(|t| t.stage == Stage::Pilot)
            .min_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
            .unwrap();
        assert_eq!(sel.m, pilot.m);
        assert_eq!(sel.path.len(), 1);
    }

    #[test]
    fn selection_is_deterministic_and_descending() {
        let s = sample_model(&ClaytonGamma::m2(2), 21, 25).unwrap();
        let grid = small_grid(256, 2);
        let dom = SearchDomain::default();
        let a = select_m(&s, &grid, &dom).unwrap();
        let b = select_m(&s, &grid, &dom).unwrap();
        assert_eq!(a.m, b.m);
        assert_eq!(a.score, b.score);
        assert_eq!(a.path.len(), 1 + 2 * 2);
        assert!(a.path.windows(2).all(|w| w[1] <= w[0]));
        let range = dom.range(25).unwrap();
        assert!(a.m.as_slice().iter().all(|v| range.contains(v)));
        let min_trace = a.trace.iter().map(|t| t.score).fold(f64::INFINITY, f64::min);
        assert!(a.score <= min_trace + 0.0);
    }

    #[test]
    fn two_point_score_uses_the_other_weight() {
        let s = Sample::from_rows(&[[0.3, 1.4], [1.1, 0.6]]).unwrap();
        let grid = small_grid(32, 2);
        let m = SmoothingVector::new(vec![6, 9]).unwrap();
        let w = grid.cell_weight();
        let mut t1 = 0.0;
        let mut t2 = 0.0;
        for x in grid.points() {
            let f = sm_estimate(&s, &m, x).unwrap();
            t1 += f * f;
            for (i, other) in [(0, 1), (1, 0)] {
                if s.row(i).iter().zip(x).all(|(a, b)| a <= b) {
                    t2 += crate::estimators::sm_weight(other, &s, &m, x).unwrap();
                }
            }
        }
        let want = w * t1 - w * t2;
        assert!((lscv_score(&s, &m, &grid).unwrap() - want).abs() < 1e-12);
        let one = Sample::from_rows(&[[1.0, 1.0]]).unwrap();
        assert!(lscv_score(&one, &m, &grid).is_err());
    }

    #[test]
    fn ise_examples() {
        let model = IndependentGamma::m1(2);
        let grid = small_grid(256, 2);
        assert_eq!(ise(|x| Ok(model.cdf(x)), &model, &grid).unwrap(), 0.0);
        let v = ise(|x| Ok(model.cdf(x) + 0.1), &model, &grid).unwrap();
        assert!((v - 0.01 * grid.region().volume()).abs() < 1e-10);
    }

    #[test]
    fn ise_helpers_agree() {
        let model = IndependentGamma::m1(2);
        let s = sample_model(&model, 3, 20).unwrap();
        let grid = small_grid(128, 2);
        let m = SmoothingVector::new(vec![10, 10]).unwrap();
        let direct = ise(|x| sm_estimate(&s, &m, x), &model, &grid).unwrap();
        let est = estimates_on_grid(&s, &m, &grid).unwrap();
        let truth = truth_on_grid(&model, &grid);
        let fast = ise_from_values(&est, &truth, grid.cell_weight());
        assert!((direct - fast).abs() < 1e-12 * direct.max(1.0));
    }
}
