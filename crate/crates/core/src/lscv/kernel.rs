//! Grid evaluation of `F̂_m` and the cross-validation score for one sample.
//!
//! For a grid point `x_g` and coordinate `j`, the tails `P(Poi(m_j x_gj) ≥ w)`
//! are needed for every threshold `w = W_ij`. [`TailBand`] produces all of
//! them by one pmf recursion, so the per-observation cost is a table lookup.
//!
//! With `Ψ_gi = ψ_i(x_g)`, `I_gi = 1{X_i ≤ x_g}` and `c_g = Σ_i I_gi`, the
//! leave-one-out identity collapses the score to
//!
//! ```text
//! LSCV(m) = w Σ_g F̂_g² − 2w/(n(n−1)) Σ_g [ n F̂_g c_g − Σ_i Ψ_gi I_gi ]
//! ```
//!
//! with `w = |S_δ|/G`.

use rayon::prelude::*;

use super::grid::EvaluationGrid;
use crate::error::{usage, Result};
use crate::estimators::{snapped_ceil, Sample, SmoothingVector};
use crate::specialfn::TailBand;

const CHUNK: usize = 64;

/// Per-sample state for evaluating many smoothing vectors on one grid.
pub struct GridKernel<'a> {
    sample: &'a Sample,
    grid: &'a EvaluationGrid,
    /// `I_gi` as 0/1, row per grid point.
    below: Vec<f64>,
    counts: Vec<f64>,
    /// Per coordinate, observation indices ordered by that coordinate.
    order: Vec<Vec<usize>>,
    /// `below` with each row permuted into the order of `X_·1`.
    below_sorted: Vec<f64>,
}

/// The other coordinates' partial product `P` and `P ∘ I` for a scan over
/// coordinate `j`, with rows permuted into the order of `X_·j` and their
/// running sums. Thresholds `W_ij` are nondecreasing in that order at every
/// level, so observations below a tail band contribute a prefix sum.
pub struct ScanContext {
    j: usize,
    p: Vec<f64>,
    pb: Vec<f64>,
    /// `G × (n + 1)` prefix sums of `p` and `pb`.
    cum_p: Vec<f64>,
    cum_pb: Vec<f64>,
}

/// Row sums over one grid point: `Σ_i Ψ_gi` and `Σ_i Ψ_gi I_gi`.
#[derive(Clone, Copy, Default)]
struct RowSums {
    psi: f64,
    psi_below: f64,
}

/// Thresholds `W_·j` for one coordinate at one smoothing level.
pub struct Column {
    j: usize,
    m: u32,
    w: Vec<u64>,
    w_min: u64,
    w_max: u64,
}

impl<'a> GridKernel<'a> {
    pub fn new(sample: &'a Sample, grid: &'a EvaluationGrid) -> Result<Self> {
        if sample.d() != grid.d() {
            return usage(format!(
                "sample has {} coordinates, grid has {}",
                sample.d(),
                grid.d()
            ));
        }
        let n = sample.n();
        let mut below = vec![0.0; grid.len() * n];
        let mut counts = vec![0.0; grid.len()];
        for (g, x) in grid.points().enumerate() {
            let row = &mut below[g * n..(g + 1) * n];
            for (i, obs) in sample.rows().enumerate() {
                if obs.iter().zip(x).all(|(a, b)| a <= b) {
                    row[i] = 1.0;
                    counts[g] += 1.0;
                }
            }
        }
        let order: Vec<Vec<usize>> = (0..sample.d())
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| sample.get(a, j).total_cmp(&sample.get(b, j)));
                idx
            })
            .collect();
        let below_sorted = below
            .chunks_exact(n)
            .flat_map(|row| order[0].iter().map(move |&i| row[i]))
            .collect();
        Ok(Self { sample, grid, below, counts, order, below_sorted })
    }

    pub fn n(&self) -> usize {
        self.sample.n()
    }

    pub fn column(&self, j: usize, m: u32) -> Column {
        let w: Vec<u64> = (0..self.n()).map(|i| snapped_ceil(m, self.sample.get(i, j))).collect();
        let w_min = w.iter().copied().min().unwrap_or(0);
        let w_max = w.iter().copied().max().unwrap_or(0);
        Column { j, m, w, w_min, w_max }
    }

    /// Columns of `m` with observations in the order of `X_·1`, so the first
    /// column's thresholds are nondecreasing.
    fn columns(&self, m: &SmoothingVector) -> Vec<Column> {
        let order = &self.order[0];
        (0..m.d())
            .map(|j| {
                let l = m.get(j);
                let w: Vec<u64> = order.iter().map(|&i| snapped_ceil(l, self.sample.get(i, j))).collect();
                let w_min = w.iter().copied().min().unwrap_or(0);
                let w_max = w.iter().copied().max().unwrap_or(0);
                Column { j, m: l, w, w_min, w_max }
            })
            .collect()
    }

    /// `Ψ_gi` restricted to the given columns, as a `G × n` matrix.
    pub fn partial_product(&self, cols: &[Column]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![1.0; self.grid.len() * n];
        out.par_chunks_mut(CHUNK * n).enumerate().for_each(|(c, block)| {
            let mut bands: Vec<TailBand> = cols.iter().map(|_| TailBand::new()).collect();
            for (r, row) in block.chunks_exact_mut(n).enumerate() {
                let x = self.grid.point(c * CHUNK + r);
                for (band, col) in bands.iter_mut().zip(cols) {
                    band.fill(col.m as f64 * x[col.j], col.w_min, col.w_max);
                    for (v, &w) in row.iter_mut().zip(&col.w) {
                        *v *= band.get(w);
                    }
                }
            }
        });
        out
    }

    /// Row sums of `Π_{cols} T` for each candidate column set, built by
    /// [`GridKernel::columns`]. Observations past the first column's band
    /// have `T = 0` and are skipped. Candidates are looped inside the grid
    /// loop so each row of `I` is read once.
    fn row_sums(&self, candidates: &[Vec<Column>]) -> Vec<Vec<RowSums>> {
        let n = self.n();
        let g_len = self.grid.len();
        let k = candidates.len();
        // out[g * k + c]
        let mut out = vec![RowSums::default(); g_len * k];
        out.par_chunks_mut(CHUNK * k).enumerate().for_each(|(chunk, block)| {
            let width = candidates.iter().map(|c| c.len()).max().unwrap_or(0);
            let mut bands: Vec<TailBand> = (0..width).map(|_| TailBand::new()).collect();
            for (r, slots) in block.chunks_exact_mut(k).enumerate() {
                let g = chunk * CHUNK + r;
                let x = self.grid.point(g);
                let below = &self.below_sorted[g * n..(g + 1) * n];
                for (slot, cols) in slots.iter_mut().zip(candidates) {
                    for (band, col) in bands.iter_mut().zip(cols) {
                        band.fill(col.m as f64 * x[col.j], col.w_min, col.w_max);
                    }
                    let start = bands[0].start();
                    let end = start + bands[0].band().len() as u64;
                    let w0 = &cols[0].w;
                    let lo = w0.partition_point(|&w| w < start);
                    let hi = lo + w0[lo..].partition_point(|&w| w < end);
                    let mut s = RowSums::default();
                    // below the first band T = 1 in that coordinate
                    for (i, &b) in below[..hi].iter().enumerate() {
                        let mut a = if i < lo { 1.0 } else { bands[0].band()[(w0[i] - start) as usize] };
                        for (band, col) in bands[1..].iter().zip(&cols[1..]) {
                            a *= band.get(col.w[i]);
                        }
                        s.psi += a;
                        s.psi_below += a * b;
                    }
                    *slot = s;
                }
            }
        });
        (0..k).map(|c| (0..g_len).map(|g| out[g * k + c]).collect()).collect()
    }

    fn score_from_sums(&self, sums: &[RowSums]) -> f64 {
        let n = self.n() as f64;
        let mut sq = 0.0;
        let mut cross = 0.0;
        for (s, &c) in sums.iter().zip(&self.counts) {
            let f = s.psi / n;
            sq += f * f;
            cross += n * f * c - s.psi_below;
        }
        let w = self.grid.cell_weight();
        w * sq - 2.0 * w / (n * (n - 1.0)) * cross
    }

    pub fn score(&self, m: &SmoothingVector) -> f64 {
        self.scores(std::slice::from_ref(m))[0]
    }

    /// Scores of several full smoothing vectors in one sweep of the grid.
    pub fn scores(&self, ms: &[SmoothingVector]) -> Vec<f64> {
        let cands: Vec<Vec<Column>> = ms.iter().map(|m| self.columns(m)).collect();
        self.row_sums(&cands).iter().map(|s| self.score_from_sums(s)).collect()
    }

    /// Precomputes the [`ScanContext`] for a scan that holds every
    /// coordinate but `j` at its level in `m`.
    pub fn scan_context(&self, m: &SmoothingVector, j: usize) -> ScanContext {
        let n = self.n();
        let cols: Vec<Column> = (0..m.d())
            .filter(|&k| k != j)
            .map(|k| self.column(k, m.get(k)))
            .collect();
        let raw = self.partial_product(&cols);
        let order = &self.order[j];
        let len = self.grid.len();
        let mut p = vec![0.0; len * n];
        let mut pb = vec![0.0; len * n];
        let mut cum_p = vec![0.0; len * (n + 1)];
        let mut cum_pb = vec![0.0; len * (n + 1)];
        for g in 0..len {
            let row = &raw[g * n..(g + 1) * n];
            let below = &self.below[g * n..(g + 1) * n];
            let (sp, spb) = (&mut p[g * n..(g + 1) * n], &mut pb[g * n..(g + 1) * n]);
            let (cp, cpb) = (&mut cum_p[g * (n + 1)..(g + 1) * (n + 1)], &mut cum_pb[g * (n + 1)..(g + 1) * (n + 1)]);
            for (r, &i) in order.iter().enumerate() {
                sp[r] = row[i];
                spb[r] = row[i] * below[i];
                cp[r + 1] = cp[r] + sp[r];
                cpb[r + 1] = cpb[r] + spb[r];
            }
        }
        ScanContext { j, p, pb, cum_p, cum_pb }
    }

    /// Score of `m` with coordinate `ctx.j` set to `mj`.
    pub fn scan_score(&self, ctx: &ScanContext, mj: u32) -> f64 {
        self.scan_scores(ctx, &[mj])[0]
    }

    /// [`GridKernel::scan_score`] for several levels in one sweep.
    pub fn scan_scores(&self, ctx: &ScanContext, levels: &[u32]) -> Vec<f64> {
        let n = self.n();
        let j = ctx.j;
        let order = &self.order[j];
        // thresholds in sorted order, nondecreasing
        let cols: Vec<Column> = levels
            .iter()
            .map(|&l| {
                let w: Vec<u64> = order.iter().map(|&i| snapped_ceil(l, self.sample.get(i, j))).collect();
                let (w_min, w_max) = (w[0], w[n - 1]);
                Column { j, m: l, w, w_min, w_max }
            })
            .collect();
        let k = cols.len();
        let g_len = self.grid.len();
        let mut out = vec![RowSums::default(); g_len * k];
        out.par_chunks_mut(CHUNK * k).enumerate().for_each(|(chunk, block)| {
            let mut band = TailBand::new();
            for (r, slots) in block.chunks_exact_mut(k).enumerate() {
                let g = chunk * CHUNK + r;
                let xj = self.grid.point(g)[j];
                let p = &ctx.p[g * n..(g + 1) * n];
                let pb = &ctx.pb[g * n..(g + 1) * n];
                let cp = &ctx.cum_p[g * (n + 1)..(g + 1) * (n + 1)];
                let cpb = &ctx.cum_pb[g * (n + 1)..(g + 1) * (n + 1)];
                for (slot, col) in slots.iter_mut().zip(&cols) {
                    band.fill(col.m as f64 * xj, col.w_min, col.w_max);
                    let start = band.start();
                    let vals = band.band();
                    let lo = col.w.partition_point(|&w| w < start);
                    let hi = lo + col.w[lo..].partition_point(|&w| w - start < vals.len() as u64);
                    let mut s = RowSums { psi: cp[lo], psi_below: cpb[lo] };
                    for i in lo..hi {
                        let t = vals[(col.w[i] - start) as usize];
                        s.psi += t * p[i];
                        s.psi_below += t * pb[i];
                    }
                    *slot = s;
                }
            }
        });
        (0..k)
            .map(|c| {
                let sums: Vec<RowSums> = (0..g_len).map(|g| out[g * k + c]).collect();
                self.score_from_sums(&sums)
            })
            .collect()
    }

    /// `F̂_m(x_g)` for every grid point, clamped to `[0, 1]`.
    pub fn estimates(&self, m: &SmoothingVector) -> Vec<f64> {
        let n = self.n() as f64;
        self.row_sums(&[self.columns(m)])[0]
            .iter()
            .map(|s| (s.psi / n).clamp(0.0, 1.0))
            .collect()
    }

    /// `F_n(x_g)` for every grid point.
    pub fn ecdf(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|c| c / n).collect()
    }
}
