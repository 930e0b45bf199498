//! Integration region `S_δ = [δ, 1/δ)^d` and low-discrepancy grids on it.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationRegion {
    delta: f64,
    d: usize,
}

impl IntegrationRegion {
    pub fn new(delta: f64, d: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return usage(format!("delta must lie in (0, 1), got {delta}"));
        }
        if d == 0 {
            return usage("region dimension must be at least 1");
        }
        Ok(Self { delta, d })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lower(&self) -> f64 {
        self.delta
    }

    pub fn upper(&self) -> f64 {
        1.0 / self.delta
    }

    pub fn side(&self) -> f64 {
        1.0 / self.delta - self.delta
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.d as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QmcKind {
    #[default]
    Sobol,
    Halton,
}

impl QmcKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sobol" => Ok(Self::Sobol),
            "halton" => Ok(Self::Halton),
            other => usage(format!("unsupported QMC kind {other:?}; expected sobol or halton")),
        }
    }
}

/// Primitive polynomial data `(a, m_1..m_s)` for Sobol dimensions 2..=8,
/// from the new-joe-kuo-6.21201 table. Dimension 1 is van der Corput.
const SOBOL_DIRECTIONS: [(u32, &[u32]); 7] = [
    (0, &[1]),
    (1, &[1, 3]),
    (1, &[1, 3, 1]),
    (2, &[1, 1, 1]),
    (1, &[1, 1, 3, 3]),
    (4, &[1, 3, 5, 13]),
    (2, &[1, 1, 5, 5, 17]),
];

pub const SOBOL_MAX_DIM: usize = SOBOL_DIRECTIONS.len() + 1;

fn sobol_directions(dim: usize) -> [u32; 32] {
    let mut v = [0u32; 32];
    if dim == 0 {
        for (k, vk) in v.iter_mut().enumerate() {
            *vk = 1 << (31 - k);
        }
        return v;
    }
    let (a, m) = SOBOL_DIRECTIONS[dim - 1];
    let s = m.len();
    for (k, mk) in m.iter().enumerate() {
        v[k] = mk << (31 - k);
    }
    for i in s..32 {
        let j = i - s;
        v[i] = v[j] ^ (v[j] >> s);
        for k in 0..s - 1 {
            if (a >> k) & 1 != 0 {
                v[i] ^= v[j + 1 + k];
            }
        }
    }
    v
}

fn sobol_points(g: usize, d: usize, shift: Option<&[u32]>) -> Vec<f64> {
    let dirs: Vec<[u32; 32]> = (0..d).map(sobol_directions).collect();
    let mut out = Vec::with_capacity(g * d);
    for i in 0..g as u64 {
        for (j, v) in dirs.iter().enumerate() {
            let mut x = 0u32;
            let mut bits = i;
            let mut k = 0;
            while bits != 0 {
                if bits & 1 != 0 {
                    x ^= v[k];
                }
                bits >>= 1;
                k += 1;
            }
            if let Some(s) = shift {
                x ^= s[j];
            }
            out.push(x as f64 / 4_294_967_296.0);
        }
    }
    out
}

fn first_primes(d: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(d);
    let mut c = 2u64;
    while primes.len() < d {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    r
}

fn halton_points(g: usize, d: usize, shift: Option<&[f64]>) -> Vec<f64> {
    let bases = first_primes(d);
    let mut out = Vec::with_capacity(g * d);
    for i in 0..g as u64 {
        for (j, &b) in bases.iter().enumerate() {
            let mut u = radical_inverse(i, b);
            if let Some(s) = shift {
                u = (u + s[j]).fract();
            }
            out.push(u);
        }
    }
    out
}

/// `G` points `x_g = δ·1 + (1/δ − δ)·u_g` with their common cell weight
/// `|S_δ|/G`.
#[derive(Debug, Clone)]
pub struct EvaluationGrid {
    region: IntegrationRegion,
    points: Vec<f64>,
    g: usize,
    cell_weight: f64,
}

impl EvaluationGrid {
    /// Maps unit-cube points (row-major, `d` per point) into the region.
    pub fn from_unit_points(region: IntegrationRegion, unit: &[f64]) -> Result<Self> {
        let d = region.d();
        if unit.is_empty() || unit.len() % d != 0 {
            return usage("unit point buffer must be a nonempty multiple of d");
        }
        let side = region.side();
        let points = unit.iter().map(|&u| region.lower() + side * u).collect();
        let g = unit.len() / d;
        Ok(Self { region, points, g, cell_weight: region.volume() / g as f64 })
    }

    pub fn region(&self) -> &IntegrationRegion {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.g
    }

    pub fn is_empty(&self) -> bool {
        self.g == 0
    }

    pub fn d(&self) -> usize {
        self.region.d()
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    #[inline]
    pub fn point(&self, g: usize) -> &[f64] {
        let d = self.d();
        &self.points[g * d..(g + 1) * d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.d())
    }

    /// `|S_δ|/G · Σ_g f(x_g)`.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.cell_weight * self.points().map(f).sum::<f64>()
    }
}

/// Unscrambled base-2 Sobol or Halton grid of `g` points; `scramble` applies
/// a seeded random digital shift (Sobol) or Cranley–Patterson rotation
/// (Halton).
pub fn qmc_grid(
    region: IntegrationRegion,
    g: usize,
    kind: QmcKind,
    scramble: Option<u64>,
) -> Result<EvaluationGrid> {
    use rand::Rng;
    if g == 0 {
        return usage("grid needs at least one point");
    }
    let d = region.d();
    let mut rng = scramble.map(crate::models::rng_from_seed);
    let unit = match kind {
        QmcKind::Sobol => {
            if d > SOBOL_MAX_DIM {
                return usage(format!(
                    "Sobol grid supports up to {SOBOL_MAX_DIM} dimensions; use halton for d = {d}"
                ));
            }
            if g as u64 > u32::MAX as u64 {
                return usage("Sobol grid size exceeds 2^32 − 1");
            }
            let shift: Option<Vec<u32>> = rng.as_mut().map(|r| (0..d).map(|_| r.random()).collect());
            sobol_points(g, d, shift.as_deref())
        }
        QmcKind::Halton => {
            let shift: Option<Vec<f64>> = rng.as_mut().map(|r| (0..d).map(|_| r.random()).collect());
            halton_points(g, d, shift.as_deref())
        }
    };
    EvaluationGrid::from_unit_points(region, &unit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_basics() {
        let r = IntegrationRegion::new(0.05, 2).unwrap();
        assert!((r.volume() - 19.95f64.powi(2)).abs() < 1e-9);
        assert!(IntegrationRegion::new(1.0, 2).is_err());
        assert!(IntegrationRegion::new(0.0, 2).is_err());
    }

    #[test]
    fn first_sobol_points() {
        let u = sobol_points(4, 2, None);
        assert_eq!(u, vec![0.0, 0.0, 0.5, 0.5, 0.25, 0.75, 0.75, 0.25]);
    }

    #[test]
    fn sobol_projections_are_stratified() {
        // each 1-d projection of the first 2^k points is {i / 2^k}
        let k = 10;
        let g = 1 << k;
        let u = sobol_points(g, SOBOL_MAX_DIM, None);
        for j in 0..SOBOL_MAX_DIM {
            let mut col: Vec<u64> = (0..g).map(|i| (u[i * SOBOL_MAX_DIM + j] * g as f64) as u64).collect();
            col.sort_unstable();
            assert!(col.iter().enumerate().all(|(i, &c)| c == i as u64), "dim {j}");
        }
    }

    #[test]
    fn halton_first_points() {
        let u = halton_points(3, 2, None);
        let want = [0.0, 0.0, 0.5, 1.0 / 3.0, 0.25, 2.0 / 3.0];
        for (a, b) in u.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_map_and_weights() {
        let r = IntegrationRegion::new(0.05, 2).unwrap();
        let grid = qmc_grid(r, 4096, QmcKind::Sobol, None).unwrap();
        assert_eq!(grid.point(0), &[0.05, 0.05]);
        assert!(grid.points().all(|p| p.iter().all(|&v| (0.05..=20.0).contains(&v))));
        assert!((grid.integrate(|_| 1.0) - r.volume()).abs() < 1e-9);
        assert!(qmc_grid(r, 0, QmcKind::Sobol, None).is_err());
        assert!(QmcKind::parse("lattice").is_err());
    }

    #[test]
    fn separable_polynomial_integral() {
        // ∫_{[a,b]^2} x² y dx dy = (b³−a³)/3 · (b²−a²)/2
        let r = IntegrationRegion::new(0.05, 2).unwrap();
        let (a, b) = (r.lower(), r.upper());
        let exact = (b.powi(3) - a.powi(3)) / 3.0 * (b * b - a * a) / 2.0;
        for (kind, tol) in [(QmcKind::Sobol, 1e-3), (QmcKind::Halton, 5e-3)] {
            let grid = qmc_grid(r, 4096, kind, None).unwrap();
            let est = grid.integrate(|p| p[0] * p[0] * p[1]);
            assert!(((est - exact) / exact).abs() < tol, "{kind:?}: {est} vs {exact}");
        }
    }

    #[test]
    fn scrambling_is_seeded() {
        let r = IntegrationRegion::new(0.1, 2).unwrap();
        let a = qmc_grid(r, 64, QmcKind::Sobol, Some(3)).unwrap();
        let b = qmc_grid(r, 64, QmcKind::Sobol, Some(3)).unwrap();
        let c = qmc_grid(r, 64, QmcKind::Sobol, None).unwrap();
        assert_eq!(a.point(5), b.point(5));
        assert_ne!(a.point(0), c.point(0));
    }
}
