//! Synchronous coupling of the `h`-transformed signal.
//!
//! For Gaussian likelihoods `φ_{j,k}` is an unnormalized Gaussian, so
//! `log h(θ, t) = log P_{Δ-t} φ_{j,k}(θ) = -½ θᵀJθ + bᵀθ + c` and the
//! `h`-process drift `α + βθ + σ² ∇log h` is affine in `θ`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{GaussianObs, LikelihoodModel, Observation};
use crate::linalg::symmetrize;
use crate::signal::{transition_over, DiscreteTransition, ModelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log h = -½ θᵀJθ + bᵀθ + c` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardQuadratic {
    pub j: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub t: f64,
}

impl BackwardQuadratic {
    pub fn log_value(&self, theta: &DVector<f64>) -> f64 {
        -0.5 * theta.dot(&(&self.j * theta)) + self.b.dot(theta) + self.c
    }

    fn flat(p: usize, t: f64) -> Self {
        Self { j: DMatrix::zeros(p, p), b: DVector::zeros(p), c: 0.0, t }
    }

    /// Add the log-likelihood quadratic of one Gaussian observation.
    fn absorb(&mut self, g: &GaussianObs, y: &DVector<f64>) -> Result<()> {
        let h = g.h();
        check_dim("observation", h.nrows(), y.len())?;
        let r_inv_y = g.r_inv() * y;
        self.j = symmetrize(&(&self.j + h.transpose() * g.r_inv() * h));
        self.b += h.transpose() * &r_inv_y;
        self.c += -0.5 * y.dot(&r_inv_y) - 0.5 * (y.len() as f64 * LN_2PI + g.log_det_r());
        Ok(())
    }

    /// `θ ↦ log E[φ(a + Bθ + ξ)]` with `ξ ~ N(0, Σ)`, where `log φ` is `self`.
    pub fn propagate(&self, tr: &DiscreteTransition) -> Result<Self> {
        let p = self.j.nrows();
        check_dim("transition", p, tr.dim())?;
        let sigma = &tr.noise_cov;
        let ident = DMatrix::<f64>::identity(p, p);
        let lu = (&ident + sigma * &self.j).lu();
        let det = lu.determinant();
        if !(det > 0.0) {
            return Err(Error::Numeric("I + ΣJ is not positive definite".into()));
        }
        let g = symmetrize(
            &lu.solve(sigma)
                .ok_or_else(|| Error::Numeric("singular I + ΣJ".into()))?,
        );
        let jg = &self.j * &g;
        let j_m = symmetrize(&(&self.j - &jg * &self.j));
        let b_m = &self.b - &jg * &self.b;
        let c_m = self.c + 0.5 * self.b.dot(&(&g * &self.b)) - 0.5 * det.ln();
        let j_theta = symmetrize(&(tr.b.transpose() * &j_m * &tr.b));
        let b_theta = tr.b.transpose() * (&b_m - &j_m * &tr.a);
        let c_theta = c_m - 0.5 * tr.a.dot(&(&j_m * &tr.a)) + b_m.dot(&tr.a);
        Ok(Self { j: j_theta, b: b_theta, c: c_theta, t: self.t })
    }
}

fn gaussian_parts(likelihood: &LikelihoodModel) -> Result<Option<&GaussianObs>> {
    match likelihood {
        LikelihoodModel::GaussianLinear(g) => Ok(Some(g)),
        LikelihoodModel::Constant => Ok(None),
        other => Err(Error::UnsupportedKind(other.kind_name())),
    }
}

/// Quadratic form of `log φ_{j,k}`, where `observations` holds `y_j … y_k`.
pub fn phi_quadratic(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
) -> Result<BackwardQuadratic> {
    let g = gaussian_parts(likelihood)?;
    if observations.is_empty() {
        return Err(Error::InvalidParameter("need at least one observation".into()));
    }
    let p = params.dim();
    let step = transition_over(params, params.delta)?;
    let mut phi = BackwardQuadratic::flat(p, params.delta);
    for (i, obs) in observations.iter().enumerate().rev() {
        if i + 1 < observations.len() {
            phi = phi.propagate(&step)?;
        }
        if let Some(g) = g {
            phi.absorb(g, &obs.value)?;
        }
    }
    Ok(phi)
}

/// `h(·, t) = P_{Δ-t} φ_{j,k}` at `n_times` uniform times on `[0, Δ]`.
pub fn backward_potential(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    n_times: usize,
) -> Result<PotentialPath> {
    if n_times < 2 {
        return Err(Error::InvalidParameter("need at least two potential times".into()));
    }
    let phi = phi_quadratic(params, likelihood, observations)?;
    let delta = params.delta;
    let quads = (0..n_times)
        .map(|i| {
            let t = if i + 1 == n_times { delta } else { delta * i as f64 / (n_times - 1) as f64 };
            let tr = transition_over(params, delta - t)?;
            let mut q = phi.propagate(&tr)?;
            q.t = t;
            Ok(q)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialPath { delta, quads })
}

pub fn grad_log_h(potential: &BackwardQuadratic, theta: &DVector<f64>) -> DVector<f64> {
    &potential.b - &potential.j * theta
}

/// Potentials on a uniform time grid over `[0, Δ]`; `(J, b)` are linearly
/// interpolated between nodes.
#[derive(Debug, Clone)]
pub struct PotentialPath {
    pub delta: f64,
    pub quads: Vec<BackwardQuadratic>,
}

impl PotentialPath {
    pub fn dim(&self) -> usize {
        self.quads[0].b.len()
    }

    pub fn grad_at(&self, t: f64, theta: &DVector<f64>) -> DVector<f64> {
        let n = self.quads.len();
        let x = (t / self.delta).clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (x.floor() as usize).min(n - 2);
        let s = x - i as f64;
        let g0 = grad_log_h(&self.quads[i], theta);
        if s == 0.0 {
            return g0;
        }
        g0 * (1.0 - s) + grad_log_h(&self.quads[i + 1], theta) * s
    }
}

/// Two Euler–Maruyama paths driven by the same Brownian increments.
#[derive(Debug, Clone)]
pub struct CoupledPaths {
    pub times: Vec<f64>,
    pub path_a: Vec<DVector<f64>>,
    pub path_b: Vec<DVector<f64>>,
}

pub fn simulate_coupled(
    theta0: &DVector<f64>,
    vartheta0: &DVector<f64>,
    potentials: &PotentialPath,
    params: &ModelParams,
    dt: f64,
    seed: u64,
) -> Result<CoupledPaths> {
    let p = params.dim();
    check_dim("theta0", p, theta0.len())?;
    check_dim("vartheta0", p, vartheta0.len())?;
    check_dim("potentials", p, potentials.dim())?;
    let delta = params.delta;
    if !(dt > 0.0 && dt <= delta / 100.0 * (1.0 + 1e-12)) {
        return Err(Error::InvalidParameter(format!("dt must lie in (0, Δ/100], got {dt}")));
    }
    let steps = (delta / dt).round() as usize;
    let dt = delta / steps as f64;
    let s2 = params.sigma * params.sigma;
    let noise_scale = params.sigma * dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(steps + 1);
    let mut path_a = Vec::with_capacity(steps + 1);
    let mut path_b = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (theta0.clone(), vartheta0.clone());
    times.push(0.0);
    path_a.push(x.clone());
    path_b.push(y.clone());
    for n in 0..steps {
        let t = n as f64 * dt;
        let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)) * noise_scale;
        let drift = |v: &DVector<f64>| &params.alpha + &params.beta * v + potentials.grad_at(t, v) * s2;
        let nx = &x + drift(&x) * dt + &z;
        let ny = &y + drift(&y) * dt + &z;
        if nx.iter().chain(ny.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Integration { step: n + 1 });
        }
        x = nx;
        y = ny;
        times.push(if n + 1 == steps { delta } else { (n + 1) as f64 * dt });
        path_a.push(x.clone());
        path_b.push(y.clone());
    }
    Ok(CoupledPaths { times, path_a, path_b })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub max_ratio: f64,
    pub time_of_max: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Largest `‖θ_t - ϑ_t‖ / (exp(-∫₀ᵗ λ) ‖θ_0 - ϑ_0‖)` along the paths, where
/// `cumulative_exponent[i]` is `∫₀^{t_i} λ(j, s) ds`. Passes when the ratio
/// stays within `1 + c·dt`.
pub fn pathwise_contraction_check(
    paths: &CoupledPaths,
    cumulative_exponent: &[f64],
    dt: f64,
    c: f64,
) -> Result<ContractionReport> {
    check_dim("cumulative exponent", paths.times.len(), cumulative_exponent.len())?;
    let d0 = (&paths.path_a[0] - &paths.path_b[0]).norm();
    if d0 == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut time_of_max = 0.0;
    for i in 0..paths.times.len() {
        let d = (&paths.path_a[i] - &paths.path_b[i]).norm();
        let r = d / ((-cumulative_exponent[i]).exp() * d0);
        if r > max_ratio {
            max_ratio = r;
            time_of_max = paths.times[i];
        }
    }
    let tolerance = 1.0 + c * dt;
    Ok(ContractionReport { max_ratio, time_of_max, tolerance, pass: max_ratio <= tolerance })
}
