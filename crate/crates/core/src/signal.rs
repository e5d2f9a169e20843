//! Linear SDE signal `dθ = (α + βθ)dt + σ dB`, its exact Gaussian
//! discretization and the spectral quantities that drive the contraction
//! rates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, expm, psd_factor, symmetrize};
use crate::quadrature::integrate;

/// Continuous-time parameters of the signal.
///
/// `alpha` and `beta` are the drift offset and slope, `sigma` the (scalar)
/// diffusion coefficient and `delta` the time between observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: DVector<f64>,
    pub beta: DMatrix<f64>,
    pub sigma: f64,
    pub delta: f64,
}

impl ModelParams {
    pub fn new(alpha: DVector<f64>, beta: DMatrix<f64>, sigma: f64, delta: f64) -> Result<Self> {
        let p = alpha.len();
        if p == 0 {
            return Err(Error::InvalidParameter("state dimension must be positive".into()));
        }
        check_dim("beta rows", p, beta.nrows())?;
        check_dim("beta columns", p, beta.ncols())?;
        if !linalg::all_finite(alpha.iter()) || !linalg::all_finite(beta.iter()) {
            return Err(Error::InvalidParameter("alpha and beta must be finite".into()));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter(format!("delta must be finite and > 0, got {delta}")));
        }
        Ok(Self { alpha, beta, sigma, delta })
    }

    /// Zero-offset model with `β = -λ I`.
    pub fn isotropic(dim: usize, lambda: f64, sigma: f64, delta: f64) -> Result<Self> {
        Self::new(
            DVector::zeros(dim),
            DMatrix::identity(dim, dim) * -lambda,
            sigma,
            delta,
        )
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }
}

/// One-step Gaussian transition `θ' = a + Bθ + ξ`, `ξ ~ N(0, noise_cov)`.
#[derive(Debug, Clone)]
pub struct DiscreteTransition {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

impl DiscreteTransition {
    pub fn new(a: DVector<f64>, b: DMatrix<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let p = a.len();
        check_dim("transition matrix rows", p, b.nrows())?;
        check_dim("transition matrix columns", p, b.ncols())?;
        check_dim("noise covariance rows", p, noise_cov.nrows())?;
        check_dim("noise covariance columns", p, noise_cov.ncols())?;
        if linalg::asymmetry(&noise_cov) > 1e-12 {
            return Err(Error::InvalidParameter("noise covariance is not symmetric".into()));
        }
        let noise_factor = psd_factor(&noise_cov)?;
        Ok(Self { a, b, noise_cov, noise_factor })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Lower factor `L` with `L Lᵀ = noise_cov`.
    pub fn noise_factor(&self) -> &DMatrix<f64> {
        &self.noise_factor
    }

    pub fn mean_from(&self, state: &DVector<f64>) -> DVector<f64> {
        &self.a + &self.b * state
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_cov.iter().all(|&x| x == 0.0)
    }
}

/// Exact transition of the signal over `horizon`.
///
/// `a` and `B = exp(horizon·β)` come from an augmented exponential; the noise
/// covariance uses Van Loan's block construction.
pub fn discretize(params: &ModelParams, horizon: f64) -> Result<DiscreteTransition> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
    }
    transition_over(params, horizon)
}

/// As [`discretize`] but also accepting a zero horizon (identity map).
pub(crate) fn transition_over(params: &ModelParams, horizon: f64) -> Result<DiscreteTransition> {
    let p = params.dim();
    if !linalg::all_finite(params.alpha.iter()) || !linalg::all_finite(params.beta.iter()) {
        return Err(Error::InvalidParameter("non-finite signal parameters".into()));
    }
    if horizon == 0.0 {
        return DiscreteTransition::new(
            DVector::zeros(p),
            DMatrix::identity(p, p),
            DMatrix::zeros(p, p),
        );
    }
    let b = expm(&(&params.beta * horizon))?;

    let mut aug = DMatrix::<f64>::zeros(p + 1, p + 1);
    aug.view_mut((0, 0), (p, p)).copy_from(&(&params.beta * horizon));
    aug.view_mut((0, p), (p, 1)).copy_from(&(&params.alpha * horizon));
    let a = expm(&aug)?.view((0, p), (p, 1)).column(0).into_owned();

    let noise_cov = if params.sigma == 0.0 {
        DMatrix::zeros(p, p)
    } else {
        let s2 = params.sigma * params.sigma;
        let mut vl = DMatrix::<f64>::zeros(2 * p, 2 * p);
        vl.view_mut((0, 0), (p, p)).copy_from(&(-&params.beta * horizon));
        vl.view_mut((0, p), (p, p))
            .copy_from(&(DMatrix::<f64>::identity(p, p) * (s2 * horizon)));
        vl.view_mut((p, p), (p, p))
            .copy_from(&(params.beta.transpose() * horizon));
        let e = expm(&vl)?;
        let upper = e.view((0, p), (p, p)).into_owned();
        let lower = e.view((p, p), (p, p)).into_owned();
        symmetrize(&(lower.transpose() * upper))
    };
    DiscreteTransition::new(a, b, noise_cov)
}

/// `λ_sig` together with the eigenvalue envelopes of `exp(βt) exp(βt)ᵀ`.
#[derive(Debug, Clone)]
pub struct SpectralProfile {
    pub lambda_sig: f64,
    beta: DMatrix<f64>,
    sigma: f64,
}

impl SpectralProfile {
    /// Smallest and largest eigenvalues of `exp(βt) exp(βt)ᵀ`.
    pub fn lambda_beta_extremes(&self, t: f64) -> (f64, f64) {
        if t == 0.0 {
            return (1.0, 1.0);
        }
        let e = expm(&(&self.beta * t)).expect("beta was validated finite");
        linalg::sym_extreme_eigenvalues(&(&e * e.transpose()))
    }

    pub fn lambda_beta_min(&self, t: f64) -> f64 {
        self.lambda_beta_extremes(t).0
    }

    pub fn lambda_beta_max(&self, t: f64) -> f64 {
        self.lambda_beta_extremes(t).1
    }

    /// `∫₀ᵗ λ_β^max(s) ds` without the `σ²` factor.
    pub fn integrated_max(&self, t: f64) -> f64 {
        integrate(|s| self.lambda_beta_max(s), 0.0, t, 1e-11)
    }

    /// `Λ_t = σ² ∫₀ᵗ λ_β^max(s) ds`.
    pub fn capital_lambda(&self, t: f64) -> f64 {
        if self.sigma == 0.0 || t == 0.0 {
            return 0.0;
        }
        self.sigma * self.sigma * self.integrated_max(t)
    }
}

pub fn spectral(params: &ModelParams) -> Result<SpectralProfile> {
    if !linalg::all_finite(params.beta.iter()) {
        return Err(Error::InvalidParameter("non-finite beta".into()));
    }
    let sym = -symmetrize(&params.beta);
    let (lambda_sig, _) = linalg::sym_extreme_eigenvalues(&sym);
    Ok(SpectralProfile {
        lambda_sig,
        beta: params.beta.clone(),
        sigma: params.sigma,
    })
}

/// Two independent copies of the signal stacked into dimension `2p`.
pub fn tensor_double(params: &ModelParams) -> ModelParams {
    ModelParams {
        alpha: linalg::stack(&params.alpha, &params.alpha),
        beta: linalg::block_diag(&params.beta, &params.beta),
        sigma: params.sigma,
        delta: params.delta,
    }
}

/// Draw `a + B·state + L z` with `z` standard normal.
pub fn sample_step<R: Rng + ?Sized>(
    transition: &DiscreteTransition,
    state: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    check_dim("state", transition.dim(), state.len())?;
    let mut next = transition.mean_from(state);
    if !transition.is_deterministic() {
        let z = DVector::from_fn(transition.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        next += transition.noise_factor() * z;
    }
    Ok(next)
}
