use proptest::prelude::*;
use szasz::estimators::sm_estimate_series;
use szasz::{empirical_cdf, loo_estimate, sm_estimate, Sample, SmoothingVector};

fn sample_strategy() -> impl Strategy<Value = Sample> {
    (1usize..=2, 1usize..=20).prop_flat_map(|(d, n)| {
        prop::collection::vec(0.0f64..5.0, n * d).prop_map(move |data| Sample::new(data, d).unwrap())
    })
}

fn config_strategy() -> impl Strategy<Value = (Sample, SmoothingVector, Vec<f64>)> {
    sample_strategy().prop_flat_map(|s| {
        let d = s.d();
        (
            Just(s),
            prop::collection::vec(1u32..=50, d).prop_map(|m| SmoothingVector::new(m).unwrap()),
            prop::collection::vec(0.0f64..6.0, d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sample_average_equals_lattice_sum((s, m, x) in config_strategy()) {
        let eps = 1e-8;
        let a = sm_estimate(&s, &m, &x).unwrap();
        let b = sm_estimate_series(&s, &m, &x, eps).unwrap();
        prop_assert!((a - b).abs() <= eps + 1e-10, "{a} vs {b}");
    }

    #[test]
    fn nondecreasing_in_each_coordinate(
        (s, m, x) in config_strategy(),
        step in prop::collection::vec(0.0f64..2.0, 2),
    ) {
        let y: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
        let fx = sm_estimate(&s, &m, &x).unwrap();
        let fy = sm_estimate(&s, &m, &y).unwrap();
        prop_assert!(fy >= fx - 1e-14, "{fx} > {fy}");
        prop_assert!((0.0..=1.0).contains(&fx));
    }

    #[test]
    fn leave_one_out_average_recovers_estimate((s, m, x) in config_strategy()) {
        prop_assume!(s.n() >= 2);
        let full = sm_estimate(&s, &m, &x).unwrap();
        let n = s.n();
        let avg: f64 = (0..n).map(|i| loo_estimate(i, &s, &m, &x).unwrap()).sum::<f64>() / n as f64;
        prop_assert!((avg - full).abs() < 1e-13);
        let direct = sm_estimate(&s.without(0).unwrap(), &m, &x).unwrap();
        prop_assert!((loo_estimate(0, &s, &m, &x).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn zero_face_gives_zero((s, m, mut x) in config_strategy(), j in 0usize..2) {
        let j = j % s.d();
        prop_assume!(s.rows().all(|r| r[j] > 0.0));
        x[j] = 0.0;
        prop_assert_eq!(sm_estimate(&s, &m, &x).unwrap(), 0.0);
    }

    #[test]
    fn far_point_gives_one((s, m, _x) in config_strategy()) {
        let top = s.as_slice().iter().cloned().fold(0.0, f64::max).max(1.0);
        let far = vec![10.0 * top; s.d()];
        prop_assert!((sm_estimate(&s, &m, &far).unwrap() - 1.0).abs() < 1e-6);
        prop_assert_eq!(empirical_cdf(&s, &far).unwrap(), 1.0);
    }
}
