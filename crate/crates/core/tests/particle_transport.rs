use approx::assert_relative_eq;
use filtercontract::grid::{uniform_nodes, GridDensity};
use filtercontract::kalman::{filter_run, GaussianBelief};
use filtercontract::likelihood::{LikelihoodModel, Observation};
use filtercontract::particle::{grid_filter_run, pf_run, systematic_resample, InitSampler};
use filtercontract::signal::{discretize, sample_step, ModelParams};
use filtercontract::transport::{sliced_wq, wq_1d, wq_block_sort, wq_exact, wq_grid_1d, wq_samples_grid_1d};
use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_force_wq(a: &DMatrix<f64>, b: &DMatrix<f64>, q: f64) -> f64 {
    let n = a.nrows();
    (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| (a.row(i) - b.row(j)).norm().powf(q))
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
        .powf(1.0 / q)
}

fn cloud(values: &[f64], n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, p, &values[..n * p])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_matches_permutations(n in 1usize..7, p in 1usize..4, vals in prop::collection::vec(-3.0f64..3.0, 36), q in prop::sample::select(vec![1.0, 2.0, 1.5])) {
        let a = cloud(&vals, n, p);
        let b = cloud(&vals[18..], n, p);
        let plan = wq_exact(&a, &b, q).unwrap();
        prop_assert!((plan.cost - brute_force_wq(&a, &b, q)).abs() <= 1e-12);
        let mut seen = plan.assignment.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn sorted_pairing_is_optimal_on_the_line(vals in prop::collection::vec(-5.0f64..5.0, 12), q in 1.0f64..3.0) {
        let a = &vals[..6];
        let b = &vals[6..];
        let oracle = brute_force_wq(&DMatrix::from_column_slice(6, 1, a), &DMatrix::from_column_slice(6, 1, b), q);
        prop_assert!((wq_1d(a, b, q).unwrap() - oracle).abs() <= 1e-12);
    }

    #[test]
    fn approximations_bracket_the_exact_value(vals in prop::collection::vec(-3.0f64..3.0, 96), seed in 0u64..100) {
        let a = cloud(&vals, 24, 2);
        let b = cloud(&vals[48..], 24, 2);
        let exact = wq_exact(&a, &b, 1.0).unwrap().cost;
        prop_assert!(wq_block_sort(&a, &b, 1.0).unwrap().cost >= exact - 1e-12);
        prop_assert!(sliced_wq(&a, &b, 1.0, 32, seed).unwrap() <= exact + 1e-12);
    }

    #[test]
    fn resampling_counts_are_floor_or_ceil(logw in prop::collection::vec(-3.0f64..3.0, 20), seed in 0u64..1000) {
        let n = 20;
        let pts = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = systematic_resample(&pts, &logw, &mut rng).unwrap();
        let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logw.iter().map(|v| (v - max).exp()).sum();
        for i in 0..n {
            let expected = n as f64 * (logw[i] - max).exp() / total;
            let count = out.column(0).iter().filter(|&&v| v == i as f64).count() as f64;
            prop_assert!(count >= expected.floor() - 1e-9 && count <= expected.ceil() + 1e-9);
        }
    }
}

#[test]
fn grid_distances_of_gaussians() {
    let nodes = uniform_nodes(-15.0, 15.0, 3001);
    let f = GridDensity::gaussian(nodes.clone(), -1.0, 1.0).unwrap();
    let g = GridDensity::gaussian(nodes.clone(), 1.5, 1.0).unwrap();
    assert_relative_eq!(wq_grid_1d(&f, &g, 1.0).unwrap(), 2.5, epsilon = 1e-4);
    let h = GridDensity::gaussian(nodes, 0.5, 4.0).unwrap();
    // W₂ between 1-D Gaussians: sqrt(Δm² + (s₁ - s₂)²).
    assert_relative_eq!(wq_grid_1d(&f, &h, 2.0).unwrap(), (2.25f64 + 1.0).sqrt(), epsilon = 1e-3);
}

#[test]
fn grid_quantiles_as_samples() {
    let nodes = uniform_nodes(-10.0, 10.0, 2001);
    let g = GridDensity::gaussian(nodes, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<f64> = (0..20_000).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    let d = wq_samples_grid_1d(&samples, &g, 1.0).unwrap();
    assert!(d < 0.03, "W1 of N(0,1) sample to grid N(0,1): {d}");
}

fn simulate(params: &ModelParams, lik: &LikelihoodModel, k: usize, seed: u64) -> Vec<Observation> {
    let tr = discretize(params, params.delta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DVector::zeros(params.dim());
    (0..=k)
        .map(|s| {
            if s > 0 {
                x = sample_step(&tr, &x, &mut rng).unwrap();
            }
            lik.sample_observation(&x, s, &mut rng).unwrap()
        })
        .collect()
}

#[test]
fn particle_filter_tracks_kalman() {
    let beta = DMatrix::from_row_slice(2, 2, &[-0.5, 0.4, -0.4, -0.5]);
    let params = ModelParams::new(DVector::zeros(2), beta, 1.0, 0.5).unwrap();
    let lik = LikelihoodModel::gaussian(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 0.5).unwrap();
    let obs = simulate(&params, &lik, 8, 1);
    let mean = DVector::from_vec(vec![0.5, -0.5]);
    let cov = DMatrix::identity(2, 2);
    let kal = filter_run(&GaussianBelief::new(mean.clone(), cov.clone()).unwrap(), &params, &lik, &obs).unwrap();
    let pf = pf_run(&InitSampler::Gaussian { mean, cov }, &params, &lik, &obs, 1 << 15, 4, 0).unwrap();
    for k in [0, 4, 8] {
        let sd = kal[k].cov.diagonal().map(f64::sqrt);
        // Loose multiple of the Monte Carlo standard error.
        let tol = 0.05 * sd.max();
        assert!((pf[k].mean() - &kal[k].mean).amax() < tol, "mean at {k}");
        assert!((pf[k].covariance() - &kal[k].cov).amax() < 0.1 * kal[k].cov.amax(), "cov at {k}");
    }
}

#[test]
fn particle_runs_are_reproducible() {
    let params = ModelParams::isotropic(2, 0.5, 1.0, 0.2).unwrap();
    let lik = LikelihoodModel::logistic(DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.3, 2.0]));
    let obs = simulate(&params, &lik, 5, 2);
    let init = InitSampler::Dirac(DVector::from_vec(vec![1.0, 0.0]));
    let a = pf_run(&init, &params, &lik, &obs, 512, 7, 3).unwrap();
    let b = pf_run(&init, &params, &lik, &obs, 512, 7, 3).unwrap();
    let c = pf_run(&init, &params, &lik, &obs, 512, 7, 4).unwrap();
    assert_eq!(a[5].points, b[5].points);
    assert_ne!(a[5].points, c[5].points);
}

#[test]
fn grid_filter_matches_kalman() {
    let params = ModelParams::new(DVector::from_element(1, 0.3), DMatrix::from_element(1, 1, -0.8), 1.2, 0.5).unwrap();
    let lik = LikelihoodModel::gaussian(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.7)).unwrap();
    let obs = simulate(&params, &lik, 10, 8);
    let tr = discretize(&params, params.delta).unwrap();
    let init = GridDensity::gaussian(uniform_nodes(-9.0, 11.0, 801), 1.0, 1.5).unwrap();
    let grid = grid_filter_run(&init, &tr, &lik, &obs).unwrap();
    let kal = filter_run(
        &GaussianBelief::new(DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 1.5)).unwrap(),
        &params,
        &lik,
        &obs,
    )
    .unwrap();
    for k in 0..=10 {
        assert_relative_eq!(grid[k].mean(), kal[k].mean[0], epsilon = 1e-6);
        assert_relative_eq!(grid[k].variance(), kal[k].cov[(0, 0)], epsilon = 1e-6);
    }
}
