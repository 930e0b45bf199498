use rand::Rng;
use szasz::lscv::{
    ise, ise_from_values, qmc_grid, select_m, truth_on_grid, GridKernel, IntegrationRegion, QmcKind,
    SearchDomain,
};
use szasz::models::{mix_seed, rng_from_seed, ClaytonGamma, DistributionModel, IndependentGamma};
use szasz::{empirical_cdf, sm_estimate, SmoothingVector};

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Per replication: LSCV scores and true ISEs of the isotropic levels.
fn score_and_ise_curves(reps: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let model = IndependentGamma::m1(2);
    let grid = qmc_grid(IntegrationRegion::new(0.05, 2).unwrap(), 4096, QmcKind::Sobol, None).unwrap();
    let truth = truth_on_grid(&model, &grid);
    let levels: Vec<SmoothingVector> =
        [5, 10, 20, 40, 64].iter().map(|&m| SmoothingVector::isotropic(m, 2).unwrap()).collect();
    (0..reps)
        .map(|r| {
            let sample = model.sample(mix_seed(77, &[r]), 100);
            let kernel = GridKernel::new(&sample, &grid).unwrap();
            let ises = levels
                .iter()
                .map(|m| ise_from_values(&kernel.estimates(m), &truth, grid.cell_weight()))
                .collect();
            (kernel.scores(&levels), ises)
        })
        .collect()
}

#[test]
fn score_ranks_track_true_ise() {
    let curves = score_and_ise_curves(50);
    let mean = curves.iter().map(|(s, i)| spearman(s, i)).sum::<f64>() / curves.len() as f64;
    assert!(mean >= 0.6, "mean Spearman {mean}");
}

#[test]
fn mean_score_curve_tracks_mean_ise_curve() {
    // E[LSCV(m)] = E[ISE(m)] − ∫F², so differences across m agree on average
    let curves = score_and_ise_curves(50);
    let k = curves[0].0.len();
    let avg = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        (0..k).map(|j| curves.iter().map(|c| pick(c)[j]).sum::<f64>() / curves.len() as f64).collect()
    };
    let (score, ise) = (avg(|c| &c.0), avg(|c| &c.1));
    assert!(spearman(&score, &ise) >= 0.6, "{score:?} vs {ise:?}");
    for j in 1..k {
        let ds = score[j] - score[0];
        let di = ise[j] - ise[0];
        assert!((ds - di).abs() < 0.25 * di.abs(), "level {j}: {ds} vs {di}");
    }
}

#[test]
fn selection_stays_in_the_search_box() {
    let grid = qmc_grid(IntegrationRegion::new(0.1, 2).unwrap(), 512, QmcKind::Halton, Some(5)).unwrap();
    let domain = SearchDomain::default();
    let models: [Box<dyn DistributionModel>; 2] =
        [Box::new(IndependentGamma::m1(2)), Box::new(ClaytonGamma::m2(2))];
    for model in &models {
        for (k, n) in [12usize, 30, 75].into_iter().enumerate() {
            let sample = model.sample(900 + k as u64, n);
            let sel = select_m(&sample, &grid, &domain).unwrap();
            let range = domain.range(n).unwrap();
            assert!(sel.m.as_slice().iter().all(|m| range.contains(m)), "{:?} outside {range:?}", sel.m);
            assert!(sel.path.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

#[test]
fn ecdf_ise_matches_plain_monte_carlo() {
    let model = IndependentGamma::m1(2);
    let region = IntegrationRegion::new(0.05, 2).unwrap();
    let sample = model.sample(4242, 100);
    let grid = qmc_grid(region, 4096, QmcKind::Sobol, None).unwrap();
    let qmc = ise(|x| empirical_cdf(&sample, x), &model, &grid).unwrap();

    let mut rng = rng_from_seed(99);
    let draws = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..draws {
        let x = [
            rng.random_range(region.lower()..region.upper()),
            rng.random_range(region.lower()..region.upper()),
        ];
        let e = empirical_cdf(&sample, &x).unwrap() - model.cdf(&x);
        acc += e * e;
    }
    let mc = region.volume() * acc / draws as f64;
    assert!(((qmc - mc) / mc).abs() < 2e-3, "qmc {qmc} vs mc {mc}");
}

#[test]
fn sup_error_shrinks_with_n() {
    let model = IndependentGamma::m1(2);
    let ticks: Vec<f64> = (0..21).map(|i| i as f64 * 0.25).collect();
    let truth: Vec<(Vec<f64>, f64)> = ticks
        .iter()
        .flat_map(|&a| ticks.iter().map(move |&b| vec![a, b]))
        .map(|x| {
            let f = model.cdf(&x);
            (x, f)
        })
        .collect();
    let mut medians = Vec::new();
    for n in [50usize, 200, 800] {
        let m = SmoothingVector::isotropic(n as u32, 2).unwrap();
        let mut sups: Vec<f64> = (0..50u64)
            .map(|r| {
                let sample = model.sample(mix_seed(31, &[n as u64, r]), n);
                truth
                    .iter()
                    .map(|(x, f)| (sm_estimate(&sample, &m, x).unwrap() - f).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        sups.sort_by(f64::total_cmp);
        medians.push(0.5 * (sups[24] + sups[25]));
    }
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}
