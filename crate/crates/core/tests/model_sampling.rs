use proptest::prelude::*;
use szasz::models::{clayton_cdf, ClaytonGamma, DistributionModel, IndependentGamma};
use szasz::{empirical_cdf, Sample};

/// Number of discordant pairs, by counting inversions of `y` after sorting
/// by `x` (no ties in continuous data).
fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; ys.len()];
    let inv = count_inversions(&mut ys, &mut buf);
    let n = x.len() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    1.0 - 2.0 * inv as f64 / pairs
}

fn count_inversions(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (a, b) = v.split_at_mut(mid);
        count_inversions(a, &mut buf[..mid]) + count_inversions(b, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[i] <= v[j] {
            buf[k] = v[i];
            i += 1;
        } else {
            buf[k] = v[j];
            count += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    let k2 = k + mid - i;
    buf[k2..n].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    count
}

fn columns(s: &Sample) -> (Vec<f64>, Vec<f64>) {
    (s.rows().map(|r| r[0]).collect(), s.rows().map(|r| r[1]).collect())
}

#[test]
fn inversion_counter_small_case() {
    assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
    assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    // one discordant pair of three
    assert!((kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn clayton_kendall_tau() {
    let model = ClaytonGamma::m2(2);
    let s = model.sample(11, 100_000);
    let (x, y) = columns(&s);
    let tau = kendall_tau(&x, &y);
    assert!((tau - 0.5).abs() < 0.01, "tau = {tau}");
}

#[test]
fn independent_margins_have_zero_tau() {
    let s = IndependentGamma::m1(2).sample(12, 20_000);
    let (x, y) = columns(&s);
    // sd of tau under independence is about 2/(3√n)
    assert!(kendall_tau(&x, &y).abs() < 3.0 * 2.0 / (3.0 * (20_000f64).sqrt()));
}

#[test]
fn gamma_margin_mean() {
    let n = 50_000;
    let s = IndependentGamma::m1(2).sample(13, n);
    // Gamma(2, 1): mean 2, sd √2
    let bound = 3.0 * 2f64.sqrt() / (n as f64).sqrt();
    for j in 0..2 {
        let mean = s.rows().map(|r| r[j]).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < bound, "coordinate {j}: {mean}");
    }
}

#[test]
fn sampled_ecdf_matches_model_cdf() {
    let n = 100_000;
    let ticks = [0.5, 1.0, 2.0, 3.0, 5.0];
    let models: [Box<dyn DistributionModel>; 2] =
        [Box::new(IndependentGamma::m1(2)), Box::new(ClaytonGamma::m2(2))];
    for (k, model) in models.iter().enumerate() {
        let s = model.sample(20 + k as u64, n);
        let mut excursions = 0;
        for &a in &ticks {
            for &b in &ticks {
                let f = model.cdf(&[a, b]);
                let band = 3.0 * (f * (1.0 - f) / n as f64).sqrt();
                if (empirical_cdf(&s, &[a, b]).unwrap() - f).abs() > band {
                    excursions += 1;
                }
            }
        }
        assert!(excursions <= 2, "{}: {excursions} excursions", model.name());
    }
}

proptest! {
    #[test]
    fn clayton_rectangles_have_nonnegative_volume(
        u1 in 0.001f64..1.0, du in 0.0f64..1.0,
        v1 in 0.001f64..1.0, dv in 0.0f64..1.0,
        theta in 0.1f64..10.0,
    ) {
        let u2 = u1 + du * (1.0 - u1);
        let v2 = v1 + dv * (1.0 - v1);
        let c = |a: f64, b: f64| clayton_cdf(&[a, b], theta).unwrap();
        let vol = c(u2, v2) - c(u1, v2) - c(u2, v1) + c(u1, v1);
        prop_assert!(vol >= -1e-14, "volume {vol}");
    }
}
