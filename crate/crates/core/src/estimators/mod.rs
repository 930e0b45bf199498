//! The empirical distribution function and the Szász–Mirakyan estimator.
//!
//! The production path evaluates the sample-average form
//!
//! ```text
//! F̂_m(x) = n⁻¹ Σ_i Π_j P(Poi(m_j x_j) ≥ ⌈m_j X_ij⌉)
//! ```
//!
//! at O(n·d) cost per point. The lattice-sum form `Σ_k F_n(k/m) P_{k,m}(x)`
//! lives in [`series`] and is only used as an oracle.

mod sample;
pub mod series;

pub use sample::{snapped_ceil, CeilCache, Sample, SmoothingVector};
pub use series::{sm_estimate_series, smoothed_operator};

use crate::error::{domain, usage, Result};
use crate::specialfn::poisson_tail;

pub(crate) fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return usage(format!("evaluation point has {} coordinates, expected {d}", x.len()));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return domain(format!("evaluation coordinates must be finite and ≥ 0, got {v}"));
    }
    Ok(())
}

/// `F_n(x) = n⁻¹ #{i : X_i ≤ x}` (coordinatewise).
pub fn empirical_cdf(sample: &Sample, x: &[f64]) -> Result<f64> {
    check_point(x, sample.d())?;
    let count = sample
        .rows()
        .filter(|row| row.iter().zip(x).all(|(a, b)| a <= b))
        .count();
    Ok(count as f64 / sample.n() as f64)
}

/// A sample bound to a smoothing vector, with its ceiling cache built once.
#[derive(Debug, Clone)]
pub struct SmEstimator<'a> {
    sample: &'a Sample,
    m: SmoothingVector,
    cache: CeilCache,
}

impl<'a> SmEstimator<'a> {
    pub fn new(sample: &'a Sample, m: SmoothingVector) -> Result<Self> {
        let cache = CeilCache::new(sample, &m)?;
        Ok(Self { sample, m, cache })
    }

    pub fn sample(&self) -> &Sample {
        self.sample
    }

    pub fn smoothing(&self) -> &SmoothingVector {
        &self.m
    }

    pub fn cache(&self) -> &CeilCache {
        &self.cache
    }

    /// `ψ_i(x) = Π_j P(Poi(m_j x_j) ≥ W_ij)`.
    pub fn weight(&self, i: usize, x: &[f64]) -> Result<f64> {
        if i >= self.sample.n() {
            return usage(format!("observation index {i} out of range for n = {}", self.sample.n()));
        }
        check_point(x, self.sample.d())?;
        self.weight_unchecked(i, x)
    }

    fn weight_unchecked(&self, i: usize, x: &[f64]) -> Result<f64> {
        let mut w = 1.0;
        for (j, (&xj, &wij)) in x.iter().zip(self.cache.row(i)).enumerate() {
            w *= poisson_tail(self.m.get(j) as f64 * xj, wij)?;
            if w == 0.0 {
                break;
            }
        }
        Ok(w)
    }

    pub fn estimate(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.sample.d())?;
        let mut acc = 0.0;
        for i in 0..self.sample.n() {
            acc += self.weight_unchecked(i, x)?;
        }
        Ok((acc / self.sample.n() as f64).clamp(0.0, 1.0))
    }

    /// Leave-one-out estimate through
    /// `F̂^(−i) = n/(n−1) · F̂ − ψ_i/(n−1)`.
    pub fn loo_estimate(&self, i: usize, x: &[f64]) -> Result<f64> {
        let n = self.sample.n();
        if n < 2 {
            return usage("leave-one-out needs at least two observations");
        }
        let psi = self.weight(i, x)?;
        let full = self.estimate(x)?;
        Ok(loo_from_full(full, psi, n))
    }
}

/// Leave-one-out identity shared by [`SmEstimator::loo_estimate`] and the
/// cross-validation kernel.
#[inline]
pub fn loo_from_full(full: f64, psi: f64, n: usize) -> f64 {
    let nf = n as f64;
    (nf * full - psi) / (nf - 1.0)
}

pub fn sm_weight(i: usize, sample: &Sample, m: &SmoothingVector, x: &[f64]) -> Result<f64> {
    SmEstimator::new(sample, m.clone())?.weight(i, x)
}

pub fn sm_estimate(sample: &Sample, m: &SmoothingVector, x: &[f64]) -> Result<f64> {
    SmEstimator::new(sample, m.clone())?.estimate(x)
}

pub fn loo_estimate(i: usize, sample: &Sample, m: &SmoothingVector, x: &[f64]) -> Result<f64> {
    SmEstimator::new(sample, m.clone())?.loo_estimate(i, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn s(rows: &[&[f64]]) -> Sample {
        Sample::from_rows(rows).unwrap()
    }

    fn m(v: &[u32]) -> SmoothingVector {
        SmoothingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ecdf_examples() {
        let one = s(&[&[1.0, 2.0]]);
        assert_eq!(empirical_cdf(&one, &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(empirical_cdf(&one, &[0.5, 3.0]).unwrap(), 0.0);
        let three = s(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]);
        assert_eq!(empirical_cdf(&three, &[2.0, 2.0]).unwrap(), 2.0 / 3.0);
        assert!(matches!(empirical_cdf(&one, &[-1.0, 2.0]), Err(Error::Domain(_))));
        assert!(empirical_cdf(&one, &[1.0]).is_err());
    }

    #[test]
    fn weight_examples() {
        let one = s(&[&[1.0]]);
        let w = sm_weight(0, &one, &m(&[2]), &[1.0]).unwrap();
        let closed = 1.0 - 3.0 * (-2.0f64).exp();
        assert!((w - closed).abs() < 1e-15);
        assert!((w - 0.593_994_2).abs() < 1e-7);
        // x_j = 0 kills any observation with X_ij > 0
        let two = s(&[&[0.4, 1.3], &[0.0, 0.0]]);
        assert_eq!(sm_weight(0, &two, &m(&[5, 5]), &[0.0, 2.0]).unwrap(), 0.0);
        // the zero observation has zero thresholds
        assert_eq!(sm_weight(1, &two, &m(&[5, 5]), &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(sm_weight(1, &two, &m(&[5, 5]), &[3.0, 0.2]).unwrap(), 1.0);
        assert!(matches!(sm_weight(2, &two, &m(&[5, 5]), &[1.0, 1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn estimate_examples() {
        let one = s(&[&[1.0]]);
        let v = sm_estimate(&one, &m(&[2]), &[1.0]).unwrap();
        assert!((v - 0.593_994_2).abs() < 1e-7);
        let data = s(&[&[0.2, 1.0], &[1.5, 0.7], &[3.0, 2.2]]);
        assert_eq!(sm_estimate(&data, &m(&[9, 4]), &[0.0, 5.0]).unwrap(), 0.0);
        assert_eq!(sm_estimate(&data, &m(&[9, 4]), &[5.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn loo_examples() {
        let data = s(&[&[0.4, 1.1], &[2.0, 0.3]]);
        let mv = m(&[6, 11]);
        let x = [1.2, 0.9];
        let loo = loo_estimate(0, &data, &mv, &x).unwrap();
        let psi2 = sm_weight(1, &data, &mv, &x).unwrap();
        assert!((loo - psi2).abs() < 1e-15);
        assert!(matches!(
            loo_estimate(0, &s(&[&[1.0, 1.0]]), &mv, &x),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn loo_matches_recomputation() {
        let rows: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![0.13 * i as f64 + 0.05, 2.0 - 0.17 * i as f64])
            .collect();
        let data = Sample::from_rows(&rows).unwrap();
        let mv = m(&[7, 13]);
        let est = SmEstimator::new(&data, mv.clone()).unwrap();
        for x in [[0.5, 0.5], [1.0, 1.5], [2.0, 2.0]] {
            let mut avg = 0.0;
            for i in 0..data.n() {
                let fast = est.loo_estimate(i, &x).unwrap();
                let direct = sm_estimate(&data.without(i).unwrap(), &mv, &x).unwrap();
                assert!((fast - direct).abs() < 1e-14);
                avg += fast;
            }
            avg /= data.n() as f64;
            assert!((avg - est.estimate(&x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn estimate_tends_to_one_far_out() {
        let data = s(&[&[0.2, 1.0], &[1.5, 0.7], &[3.0, 2.2]]);
        let v = sm_estimate(&data, &m(&[3, 8]), &[30.0, 30.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
    }
}
