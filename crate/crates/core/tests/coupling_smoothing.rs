use approx::assert_relative_eq;
use filtercontract::coupling::{
    backward_potential, grad_log_h, pathwise_contraction_check, phi_quadratic, simulate_coupled,
};
use filtercontract::grid::{uniform_nodes, GridDensity};
use filtercontract::likelihood::{Covariates, LikelihoodModel, Observation};
use filtercontract::particle::grid_filter_from_dirac;
use filtercontract::rates::RateModel;
use filtercontract::signal::{discretize, sample_step, ModelParams};
use filtercontract::smoothing::{
    cauchy_decay, eigen_residual, logconcavity_check, matrix_identity_check, phi_sequence, r_kernel_compose,
    weighted_contraction, weighted_contraction_fixed, weighted_wasserstein, SmoothingState,
};
use filtercontract::transport::wq_grid_1d;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

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

/// OU transition over `t` in one dimension: `(a, b, var)`.
fn ou(alpha: f64, beta: f64, sigma: f64, t: f64) -> (f64, f64, f64) {
    let b = (beta * t).exp();
    (alpha * (b - 1.0) / beta, b, sigma * sigma * (b * b - 1.0) / (2.0 * beta))
}

fn gauss_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-0.5 * (x - m).powi(2) / v).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * f(lo + i as f64 * h)
        })
        .sum::<f64>()
        * h
}

#[test]
fn backward_potential_matches_quadrature() {
    let (alpha, beta, sigma, delta) = (0.3, -0.6, 0.9, 0.8);
    let params = ModelParams::new(DVector::from_element(1, alpha), DMatrix::from_element(1, 1, beta), sigma, delta).unwrap();
    let (hv, rv) = (1.4, 0.6);
    let lik = LikelihoodModel::gaussian(DMatrix::from_element(1, 1, hv), DMatrix::from_element(1, 1, rv)).unwrap();
    let ys = [0.7, -0.4];
    let obs = [Observation::new(1, DVector::from_element(1, ys[0])), Observation::new(2, DVector::from_element(1, ys[1]))];
    let g = |x: f64, y: f64| gauss_pdf(y, hv * x, rv);
    let (a, b, v) = ou(alpha, beta, sigma, delta);
    let phi = |x: f64| g(x, ys[0]) * integrate(|z| gauss_pdf(z, a + b * x, v) * g(z, ys[1]), -15.0, 15.0, 6000);
    let quad = phi_quadratic(&params, &lik, &obs).unwrap();
    for &x in &[-1.0, 0.0, 0.4, 2.0] {
        assert_relative_eq!(quad.log_value(&DVector::from_element(1, x)), phi(x).ln(), epsilon = 1e-9);
    }
    let path = backward_potential(&params, &lik, &obs, 5).unwrap();
    let t = path.quads[1].t;
    let (a2, b2, v2) = ou(alpha, beta, sigma, delta - t);
    for &x in &[-0.5, 1.0] {
        let h = integrate(|z| gauss_pdf(z, a2 + b2 * x, v2) * phi(z), -15.0, 15.0, 3000);
        assert_relative_eq!(path.quads[1].log_value(&DVector::from_element(1, x)), h.ln(), epsilon = 1e-7);
    }
    assert_eq!(path.quads.last().unwrap().log_value(&DVector::from_element(1, 0.2)), quad.log_value(&DVector::from_element(1, 0.2)));
}

#[test]
fn potential_gradient_matches_finite_differences() {
    let beta = DMatrix::from_row_slice(2, 2, &[-0.5, 0.7, -0.2, -0.1]);
    let params = ModelParams::new(DVector::from_vec(vec![0.1, 0.2]), beta, 1.2, 0.5).unwrap();
    let lik = LikelihoodModel::gaussian(DMatrix::from_row_slice(1, 2, &[1.0, 0.5]), DMatrix::from_element(1, 1, 0.3)).unwrap();
    let obs = simulate(&params, &lik, 3, 2);
    let path = backward_potential(&params, &lik, &obs[1..], 9).unwrap();
    let q = &path.quads[4];
    let theta = DVector::from_vec(vec![0.4, -1.1]);
    let g = grad_log_h(q, &theta);
    for i in 0..2 {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += 1e-5;
        dn[i] -= 1e-5;
        assert_relative_eq!(g[i], (q.log_value(&up) - q.log_value(&dn)) / 2e-5, epsilon = 1e-6);
    }
}

#[test]
fn h_process_endpoint_law() {
    // The h-transformed path at time Δ has law ∝ P_Δ(θ, ·) φ.
    let (beta, sigma, delta) = (-0.5, 1.0, 1.0);
    let params = ModelParams::new(DVector::zeros(1), DMatrix::from_element(1, 1, beta), sigma, delta).unwrap();
    let (hv, rv, y) = (1.0, 0.5, 1.5);
    let lik = LikelihoodModel::gaussian(DMatrix::from_element(1, 1, hv), DMatrix::from_element(1, 1, rv)).unwrap();
    let obs = [Observation::new(1, DVector::from_element(1, y))];
    let path = backward_potential(&params, &lik, &obs, 201).unwrap();
    let theta = -0.5;
    let (a, b, v) = ou(0.0, beta, sigma, delta);
    let prec = 1.0 / v + hv * hv / rv;
    let mean = ((a + b * theta) / v + hv * y / rv) / prec;
    let x0 = DVector::from_element(1, theta);
    let n = 4000;
    let ends: Vec<f64> = (0..n)
        .map(|s| simulate_coupled(&x0, &x0, &path, &params, delta / 200.0, s).unwrap().path_a[200][0])
        .collect();
    let m = ends.iter().sum::<f64>() / n as f64;
    let var = ends.iter().map(|e| (e - m).powi(2)).sum::<f64>() / n as f64;
    let se = (1.0 / prec / n as f64).sqrt();
    assert!((m - mean).abs() < 4.0 * se + 0.02, "mean {m} vs {mean}");
    assert!((var - 1.0 / prec).abs() < 0.1 / prec, "var {var} vs {}", 1.0 / prec);
}

#[test]
fn coupled_paths_contract_at_the_rate() {
    let beta = DMatrix::from_row_slice(3, 3, &[-0.6, 0.5, 0.0, -0.5, -0.4, 0.2, 0.1, 0.0, -0.8]);
    let params = ModelParams::new(DVector::zeros(3), beta, 1.0, 1.0).unwrap();
    let lik = LikelihoodModel::gaussian(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 0.8).unwrap();
    let obs = simulate(&params, &lik, 2, 4);
    let path = backward_potential(&params, &lik, &obs[1..], 1001).unwrap();
    let dt = 1e-3;
    let times: Vec<f64> = (0..=1000).map(|i| i as f64 * dt).collect();
    let cum = RateModel::new(&params).unwrap().cumulative_exponent_at(lik.strong_logconcavity_parameter(), &times).unwrap();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
        let paths = simulate_coupled(&x, &y, &path, &params, dt, seed).unwrap();
        let report = pathwise_contraction_check(&paths, &cum, dt, 10.0).unwrap();
        assert!(report.pass, "seed {seed}: {report:?}");
    }
}

fn logistic_setup(seed: u64, k: usize) -> (ModelParams, LikelihoodModel, Vec<Observation>) {
    let params = ModelParams::isotropic(1, 0.5, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = (0..=k).map(|_| DMatrix::from_fn(3, 1, |_, _| StandardNormal.sample(&mut rng))).collect();
    let lik = LikelihoodModel::LogisticGlm(Covariates::PerStep(xs));
    let obs = simulate(&params, &lik, k, seed);
    (params, lik, obs)
}

#[test]
fn grid_backward_weights_match_quadratic_potentials() {
    let params = ModelParams::new(DVector::from_element(1, 0.2), DMatrix::from_element(1, 1, -0.7), 1.0, 0.7).unwrap();
    let lik = LikelihoodModel::gaussian(DMatrix::from_element(1, 1, 0.8), DMatrix::from_element(1, 1, 1.5)).unwrap();
    let obs = simulate(&params, &lik, 4, 6);
    let nodes = uniform_nodes(-8.0, 8.0, 641);
    let seq = phi_sequence(&params, &lik, &obs, 1, 4, &nodes).unwrap();
    for w in &seq {
        let quad = phi_quadratic(&params, &lik, &obs[w.j..=4]).unwrap();
        for (i, &x) in nodes.iter().enumerate().step_by(40) {
            assert_relative_eq!(w.log_phi[i], quad.log_value(&DVector::from_element(1, x)), epsilon = 1e-7);
        }
    }
}

#[test]
fn eigen_relation_and_log_concavity() {
    let (params, lik, obs) = logistic_setup(5, 8);
    let nodes = uniform_nodes(-12.0, 12.0, 481);
    let mu0 = GridDensity::gaussian(nodes.clone(), 0.5, 2.0).unwrap();
    let state = SmoothingState::build(&params, &lik, &obs, &mu0).unwrap();
    let mut seq = phi_sequence(&params, &lik, &obs, 0, 8, &nodes).unwrap();
    for w in seq.iter_mut() {
        state.normalize_weight(w).unwrap();
        assert!(logconcavity_check(&nodes, &w.log_phi, 0.0).unwrap().pass);
    }
    for j in 1..=8 {
        assert!(eigen_residual(&state, &lik, &obs, &seq[j], &seq[j - 1]).unwrap() <= 1e-6);
    }
    for pi in &state.filter_seq {
        assert!(logconcavity_check(&nodes, &pi.log_values, 0.0).unwrap().pass);
    }
}

#[test]
fn kernel_composition_reproduces_the_filter() {
    let (params, lik, obs) = logistic_setup(7, 6);
    let nodes = uniform_nodes(-10.0, 10.0, 801);
    let theta = 0.8;
    let weights = phi_sequence(&params, &lik, &obs, 1, 6, &nodes).unwrap();
    let composed = r_kernel_compose(&params, &weights, theta, &nodes).unwrap();
    let tr = discretize(&params, params.delta).unwrap();
    let direct = grid_filter_from_dirac(theta, &tr, &lik, &obs, 801).unwrap();
    let d = wq_grid_1d(&composed, direct.last().unwrap(), 1.0).unwrap();
    assert!(d <= 1e-4, "W1 = {d}");
}

#[test]
fn flat_weight_gives_plain_distance() {
    let nodes = uniform_nodes(-10.0, 10.0, 1001);
    let a = GridDensity::gaussian(nodes.clone(), -1.0, 1.0).unwrap();
    let b = GridDensity::gaussian(nodes.clone(), 0.5, 2.0).unwrap();
    let flat = vec![0.0; nodes.len()];
    assert_relative_eq!(weighted_wasserstein(&a, &b, &flat, 1.0).unwrap(), wq_grid_1d(&a, &b, 1.0).unwrap(), epsilon = 1e-12);
}

#[test]
fn horizon_differences_shrink() {
    let (params, lik, obs) = logistic_setup(3, 14);
    let nodes = uniform_nodes(-12.0, 12.0, 481);
    let mu0 = GridDensity::gaussian(nodes, 0.0, 1.0).unwrap();
    let state = SmoothingState::build(&params, &lik, &obs, &mu0).unwrap();
    let decay = cauchy_decay(&state, &params, &lik, &obs, 2, 4, 8, 1.0).unwrap();
    assert_eq!(decay.len(), 8);
    assert!(decay[7] < decay[0] * 1e-2, "{decay:?}");
}

#[test]
fn sliding_and_fixed_horizons_agree() {
    let (params, lik, obs) = logistic_setup(11, 20);
    let nodes = uniform_nodes(-12.0, 12.0, 385);
    let mu = GridDensity::gaussian(nodes.clone(), -2.0, 4.0).unwrap();
    let nu = GridDensity::gaussian(nodes, 2.0, 4.0).unwrap();
    let sliding = weighted_contraction(&params, &lik, &obs, &mu, &nu, 6, 12, 1.0).unwrap();
    let fixed = weighted_contraction_fixed(&params, &lik, &obs, &mu, &nu, 6, 12, 1.0).unwrap();
    for k in 0..=6 {
        assert_relative_eq!(sliding.distances[k], fixed[k], max_relative = 1e-4);
    }
    assert!(sliding.truncation() < 1e-3);
    assert!(weighted_contraction(&params, &lik, &obs, &mu, &mu, 10, 12, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_identity_on_random_instances(
        fa in prop::collection::vec(-1.0f64..1.0, 16),
        sa in prop::collection::vec(-1.0f64..1.0, 16),
        u in prop::collection::vec(-2.0f64..2.0, 4),
        v in prop::collection::vec(-2.0f64..2.0, 4),
    ) {
        let fm = DMatrix::from_row_slice(4, 4, &fa);
        let sm = DMatrix::from_row_slice(4, 4, &sa);
        let f = &fm * fm.transpose() + DMatrix::identity(4, 4) * 0.1;
        let s = &sm * sm.transpose() + DMatrix::identity(4, 4) * 0.1;
        let (u, v) = (DVector::from_vec(u), DVector::from_vec(v));
        let scale = 1.0 + f.norm() * v.norm_squared() + s.norm() * (&u - &v).norm_squared();
        prop_assert!(matrix_identity_check(&f, &s, &u, &v).unwrap() <= 1e-9 * scale);
    }

    #[test]
    fn gaussian_times_log_concave_stays_log_concave(m in -2.0f64..2.0, var in 0.2f64..3.0, c in prop::collection::vec(-2.0f64..2.0, 3), y in 0u8..2) {
        // Product of a Gaussian prior and a logistic term.
        let nodes = uniform_nodes(-10.0, 10.0, 401);
        let lik = LikelihoodModel::logistic(DMatrix::from_column_slice(3, 1, &c));
        let obs = Observation::new(0, DVector::from_element(3, y as f64));
        let lv: Vec<f64> = nodes
            .iter()
            .map(|&x| -0.5 * (x - m).powi(2) / var + lik.log_g(&DVector::from_element(1, x), &obs).unwrap())
            .collect();
        prop_assert!(logconcavity_check(&nodes, &lv, 0.0).unwrap().pass);
        // The offset form: strongly log-concave with parameter 1/var.
        prop_assert!(logconcavity_check(&nodes, &lv, 1.0 / var * 0.999).unwrap().pass);
    }
}
