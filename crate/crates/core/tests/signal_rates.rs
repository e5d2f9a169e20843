use approx::assert_relative_eq;
use filtercontract::rates::{cumulative_bound, lambda_h, step_exponent, RateModel};
use filtercontract::signal::{discretize, spectral, tensor_double, ModelParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Mean and covariance ODEs `m' = α + βm`, `P' = βP + Pβᵀ + σ²I`, by RK4.
fn moments_by_rk4(params: &ModelParams, m0: &DVector<f64>, horizon: f64, steps: usize) -> (DVector<f64>, DMatrix<f64>) {
    let p = params.dim();
    let s2 = params.sigma * params.sigma;
    let fm = |m: &DVector<f64>| &params.alpha + &params.beta * m;
    let fp = |c: &DMatrix<f64>| &params.beta * c + c * params.beta.transpose() + DMatrix::identity(p, p) * s2;
    let h = horizon / steps as f64;
    let mut m = m0.clone();
    let mut c = DMatrix::zeros(p, p);
    for _ in 0..steps {
        let k1 = fm(&m);
        let k2 = fm(&(&m + &k1 * (h / 2.0)));
        let k3 = fm(&(&m + &k2 * (h / 2.0)));
        let k4 = fm(&(&m + &k3 * h));
        m += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let l1 = fp(&c);
        let l2 = fp(&(&c + &l1 * (h / 2.0)));
        let l3 = fp(&(&c + &l2 * (h / 2.0)));
        let l4 = fp(&(&c + &l3 * h));
        c += (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0);
    }
    (m, c)
}

fn taylor_expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    // Scale down, sum the series, square back up.
    let norm = a.abs().max();
    let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0);
    let scaled = a / 2f64.powi(squarings);
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for i in 1..30 {
        term = &term * &scaled / i as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn rotation_model() -> ModelParams {
    let beta = DMatrix::from_row_slice(2, 2, &[-0.4, 1.3, -0.9, -0.7]);
    ModelParams::new(DVector::from_vec(vec![0.3, -0.2]), beta, 0.8, 0.7).unwrap()
}

#[test]
fn discretization_matches_moment_odes() {
    let params = rotation_model();
    let tr = discretize(&params, params.delta).unwrap();
    let m0 = DVector::from_vec(vec![1.5, -0.5]);
    let (m, c) = moments_by_rk4(&params, &m0, params.delta, 4000);
    let mean = tr.mean_from(&m0);
    assert!((mean - m).amax() < 1e-11);
    assert!((&tr.noise_cov - c).amax() < 1e-11);
}

#[test]
fn unstable_and_degenerate_discretizations() {
    let beta = DMatrix::from_row_slice(3, 3, &[0.2, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.5, 0.0]);
    let params = ModelParams::new(DVector::from_vec(vec![0.0, 1.0, -1.0]), beta, 1.3, 1.1).unwrap();
    let tr = discretize(&params, params.delta).unwrap();
    let m0 = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let (m, c) = moments_by_rk4(&params, &m0, params.delta, 4000);
    assert!((tr.mean_from(&m0) - m).amax() < 1e-10);
    assert!((&tr.noise_cov - c).amax() < 1e-10);
    assert!(discretize(&params, 0.0).is_err());
}

#[test]
fn spectral_quantities_match_oracle() {
    let params = rotation_model();
    let sp = spectral(&params).unwrap();
    let sym = -(&params.beta + params.beta.transpose()) * 0.5;
    let eig = sym.symmetric_eigen().eigenvalues;
    assert_relative_eq!(sp.lambda_sig, eig.min(), epsilon = 1e-13);
    for &t in &[0.0, 0.1, 0.35, 0.7] {
        let e = taylor_expm(&(&params.beta * t));
        let ev = (&e * e.transpose()).symmetric_eigen().eigenvalues;
        assert_relative_eq!(sp.lambda_beta_min(t), ev.min(), epsilon = 1e-12);
        assert_relative_eq!(sp.lambda_beta_max(t), ev.max(), epsilon = 1e-12);
    }
    let lam = simpson(
        |s| {
            let e = taylor_expm(&(&params.beta * s));
            (&e * e.transpose()).symmetric_eigen().eigenvalues.max()
        },
        0.0,
        0.5,
        400,
    );
    assert_relative_eq!(sp.capital_lambda(0.5), 0.64 * lam, epsilon = 1e-9);
}

#[test]
fn rate_matches_direct_evaluation() {
    let params = rotation_model();
    let sp = spectral(&params).unwrap();
    let s2 = params.sigma * params.sigma;
    let lg = 1.7;
    let delta = params.delta;
    let oracle = |t: f64| {
        let r = delta - t;
        let e = taylor_expm(&(&params.beta * r));
        let lmin = (&e * e.transpose()).symmetric_eigen().eigenvalues.min();
        let big = s2 * simpson(
            |s| {
                let e = taylor_expm(&(&params.beta * s));
                (&e * e.transpose()).symmetric_eigen().eigenvalues.max()
            },
            0.0,
            r,
            200,
        );
        lg * lmin / (1.0 + lg * big)
    };
    for &t in &[0.0, 0.2, 0.5, 0.7] {
        assert_relative_eq!(lambda_h(&params, lg, t).unwrap(), oracle(t), epsilon = 1e-9);
    }
    let total = sp.lambda_sig * delta + s2 * simpson(oracle, 0.0, delta, 60);
    assert_relative_eq!(step_exponent(&params, lg).unwrap(), total, epsilon = 1e-8);
}

/// `λΔ + log(1 + σ²λ_g ∫₀^Δ e^{-2λt} dt)` with the integral in closed form.
fn isotropic_oracle(lambda: f64, sigma: f64, delta: f64, lg: f64) -> f64 {
    let integral = if lambda == 0.0 { delta } else { (1.0 - (-2.0 * lambda * delta).exp()) / (2.0 * lambda) };
    lambda * delta + (1.0 + sigma * sigma * lg * integral).ln()
}

#[test]
fn isotropic_grid_of_cases() {
    for &lambda in &[-1.0, 0.0, 0.5, 2.0] {
        for &sigma in &[0.5, 1.0, 2.0] {
            for &lg in &[0.0, 0.3, 1.0, 4.0] {
                let params = ModelParams::isotropic(2, lambda, sigma, 1.0).unwrap();
                let e = step_exponent(&params, lg).unwrap();
                assert!((e - isotropic_oracle(lambda, sigma, 1.0, lg)).abs() <= 1e-8, "λ={lambda} σ={sigma} λg={lg}");
            }
        }
    }
}

#[test]
fn zero_signal_rate_product() {
    let params = ModelParams::isotropic(1, 0.0, 1.5, 0.4).unwrap();
    let seq = [0.5, 2.0, 0.0, 1.0];
    let profile = cumulative_bound(&params, &seq).unwrap();
    let mut prod = 1.0;
    for (k, lg) in seq.iter().enumerate() {
        prod /= 1.0 + 2.25 * lg * 0.4;
        assert_relative_eq!(profile.bound_factor(k + 1), prod, epsilon = 1e-12);
    }
}

#[test]
fn noise_free_rate_is_signal_rate() {
    let params = rotation_model();
    let quiet = ModelParams { sigma: 0.0, ..params.clone() };
    let sp = spectral(&params).unwrap();
    assert_eq!(step_exponent(&quiet, 3.0).unwrap(), sp.lambda_sig * params.delta);
}

fn random_params(entries: Vec<f64>, sigma: f64, delta: f64) -> ModelParams {
    let p = (entries.len() as f64).sqrt() as usize;
    ModelParams::new(DVector::zeros(p), DMatrix::from_row_slice(p, p, &entries), sigma, delta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn isotropic_closed_form(lambda in -1.0f64..2.5, sigma in 0.05f64..2.0, delta in 0.05f64..2.0, lg in 0.0f64..4.0) {
        let params = ModelParams::isotropic(1, lambda, sigma, delta).unwrap();
        let e = RateModel::new(&params).unwrap().step_exponent(lg).unwrap();
        prop_assert!((e - isotropic_oracle(lambda, sigma, delta, lg)).abs() <= 1e-8);
    }

    #[test]
    fn doubling_keeps_the_bound(entries in prop::collection::vec(-1.5f64..1.0, 9), sigma in 0.1f64..1.5, lg in 0.0f64..2.0) {
        let params = random_params(entries, sigma, 0.5);
        let seq = vec![lg; 6];
        let a = cumulative_bound(&params, &seq).unwrap();
        let b = cumulative_bound(&tensor_double(&params), &seq).unwrap();
        for k in 0..=6 {
            prop_assert!((a.bound_factor(k) - b.bound_factor(k)).abs() <= 1e-12);
        }
    }

    #[test]
    fn more_curvature_never_slows_contraction(entries in prop::collection::vec(-1.5f64..1.0, 4), lg in 0.0f64..2.0, extra in 0.0f64..2.0) {
        let params = random_params(entries, 1.0, 0.5);
        let a = step_exponent(&params, lg).unwrap();
        let b = step_exponent(&params, lg + extra).unwrap();
        prop_assert!(b >= a - 1e-12);
        prop_assert!(a >= spectral(&params).unwrap().lambda_sig * 0.5 - 1e-12);
    }

    #[test]
    fn transition_composes(entries in prop::collection::vec(-1.0f64..1.0, 4), sigma in 0.0f64..1.5, h in 0.05f64..1.0) {
        let mut params = random_params(entries, sigma, h);
        params.alpha = DVector::from_vec(vec![0.5, -0.3]);
        let one = discretize(&params, h).unwrap();
        let two = discretize(&params, 2.0 * h).unwrap();
        let b2 = &one.b * &one.b;
        let a2 = &one.a + &one.b * &one.a;
        let c2 = &one.b * &one.noise_cov * one.b.transpose() + &one.noise_cov;
        prop_assert!((b2 - &two.b).amax() < 1e-11);
        prop_assert!((a2 - &two.a).amax() < 1e-11);
        prop_assert!((c2 - &two.noise_cov).amax() < 1e-11);
    }
}
