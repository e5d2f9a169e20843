//! Observation likelihoods `g_k(θ, y_k)` and their strong log-concavity
//! parameter `λ_g`.
//!
//! Every family here satisfies `g = exp(-λ_g θᵀθ / 2) · g̃` with `g̃`
//! log-concave. The GLM families (logistic and Poisson with canonical link)
//! are log-concave but not strongly so, giving `λ_g = 0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observation `y_k` attached to step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: usize,
    pub value: DVector<f64>,
}

impl Observation {
    pub fn new(step: usize, value: DVector<f64>) -> Self {
        Self { step, value }
    }

    pub fn empty(step: usize) -> Self {
        Self { step, value: DVector::zeros(0) }
    }
}

/// Covariates `x_k` (an `n × p` matrix), either shared by all steps or given
/// per step.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariates {
    Fixed(DMatrix<f64>),
    PerStep(Vec<DMatrix<f64>>),
}

impl Covariates {
    pub fn at(&self, step: usize) -> Result<&DMatrix<f64>> {
        match self {
            Covariates::Fixed(x) => Ok(x),
            Covariates::PerStep(xs) => xs.get(step).ok_or_else(|| {
                Error::InvalidParameter(format!("no covariates for step {step} ({} given)", xs.len()))
            }),
        }
    }

    fn first(&self) -> Option<&DMatrix<f64>> {
        match self {
            Covariates::Fixed(x) => Some(x),
            Covariates::PerStep(xs) => xs.first(),
        }
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Covariates {
        match self {
            Covariates::Fixed(x) => Covariates::Fixed(f(x)),
            Covariates::PerStep(xs) => Covariates::PerStep(xs.iter().map(f).collect()),
        }
    }
}

/// Linear observation `y = Hθ + ε`, `ε ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianObs {
    h: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_factor: DMatrix<f64>,
    log_det_r: f64,
    lambda_g: f64,
}

impl GaussianObs {
    pub fn new(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = h.nrows();
        check_dim("noise covariance rows", n, r.nrows())?;
        check_dim("noise covariance columns", n, r.ncols())?;
        if !linalg::all_finite(h.iter()) || !linalg::all_finite(r.iter()) {
            return Err(Error::InvalidParameter("non-finite observation model".into()));
        }
        if linalg::asymmetry(&r) > 1e-12 {
            return Err(Error::InvalidParameter("R must be symmetric".into()));
        }
        let chol = r
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("R must be positive definite".into()))?;
        let log_det_r = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let r_inv = linalg::symmetrize(&chol.inverse());
        let info = linalg::symmetrize(&(h.transpose() * &r_inv * &h));
        let lambda_g = if h.ncols() == 0 {
            0.0
        } else {
            linalg::sym_extreme_eigenvalues(&info).0.max(0.0)
        };
        Ok(Self {
            r_factor: chol.l(),
            h,
            r,
            r_inv,
            log_det_r,
            lambda_g,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn log_det_r(&self) -> f64 {
        self.log_det_r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodModel {
    GaussianLinear(GaussianObs),
    LogisticGlm(Covariates),
    PoissonGlm(Covariates),
    Constant,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_factorial(k: f64) -> f64 {
    (2..=(k as u64)).map(|i| (i as f64).ln()).sum()
}

impl LikelihoodModel {
    pub fn gaussian(h: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Ok(Self::GaussianLinear(GaussianObs::new(h, r)?))
    }

    pub fn logistic(covariates: DMatrix<f64>) -> Self {
        Self::LogisticGlm(Covariates::Fixed(covariates))
    }

    pub fn poisson(covariates: DMatrix<f64>) -> Self {
        Self::PoissonGlm(Covariates::Fixed(covariates))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::GaussianLinear(_) => "gaussian_linear",
            Self::LogisticGlm(_) => "logistic_glm",
            Self::PoissonGlm(_) => "poisson_glm",
            Self::Constant => "constant",
        }
    }

    /// State dimension the model expects, if it constrains one.
    pub fn state_dim(&self) -> Option<usize> {
        match self {
            Self::GaussianLinear(g) => Some(g.h.ncols()),
            Self::LogisticGlm(c) | Self::PoissonGlm(c) => c.first().map(|x| x.ncols()),
            Self::Constant => None,
        }
    }

    pub fn obs_dim(&self, step: usize) -> Result<usize> {
        match self {
            Self::GaussianLinear(g) => Ok(g.h.nrows()),
            Self::LogisticGlm(c) | Self::PoissonGlm(c) => Ok(c.at(step)?.nrows()),
            Self::Constant => Ok(0),
        }
    }

    fn linear_predictor<'a>(
        &self,
        covariates: &'a Covariates,
        theta: &DVector<f64>,
        obs: &Observation,
    ) -> Result<(DVector<f64>, &'a DMatrix<f64>)> {
        let x = covariates.at(obs.step)?;
        check_dim("state", x.ncols(), theta.len())?;
        check_dim("observation", x.nrows(), obs.value.len())?;
        Ok((x * theta, x))
    }

    pub fn log_g(&self, theta: &DVector<f64>, obs: &Observation) -> Result<f64> {
        match self {
            Self::GaussianLinear(g) => {
                check_dim("state", g.h.ncols(), theta.len())?;
                check_dim("observation", g.h.nrows(), obs.value.len())?;
                let resid = &obs.value - &g.h * theta;
                let n = resid.len() as f64;
                Ok(-0.5 * (n * LN_2PI + g.log_det_r + resid.dot(&(&g.r_inv * &resid))))
            }
            Self::LogisticGlm(c) => {
                let (eta, _) = self.linear_predictor(c, theta, obs)?;
                Ok(eta
                    .iter()
                    .zip(obs.value.iter())
                    .map(|(&e, &y)| y * e - softplus(e))
                    .sum())
            }
            Self::PoissonGlm(c) => {
                let (eta, _) = self.linear_predictor(c, theta, obs)?;
                Ok(eta
                    .iter()
                    .zip(obs.value.iter())
                    .map(|(&e, &y)| y * e - e.exp() - ln_factorial(y))
                    .sum())
            }
            Self::Constant => {
                check_dim("observation", 0, obs.value.len())?;
                Ok(0.0)
            }
        }
    }

    pub fn grad_log_g(&self, theta: &DVector<f64>, obs: &Observation) -> Result<DVector<f64>> {
        match self {
            Self::GaussianLinear(g) => {
                check_dim("state", g.h.ncols(), theta.len())?;
                check_dim("observation", g.h.nrows(), obs.value.len())?;
                let resid = &obs.value - &g.h * theta;
                Ok(g.h.transpose() * (&g.r_inv * resid))
            }
            Self::LogisticGlm(c) => {
                let (eta, x) = self.linear_predictor(c, theta, obs)?;
                let w = DVector::from_iterator(
                    eta.len(),
                    eta.iter().zip(obs.value.iter()).map(|(&e, &y)| y - sigmoid(e)),
                );
                Ok(x.transpose() * w)
            }
            Self::PoissonGlm(c) => {
                let (eta, x) = self.linear_predictor(c, theta, obs)?;
                let w = DVector::from_iterator(
                    eta.len(),
                    eta.iter().zip(obs.value.iter()).map(|(&e, &y)| y - e.exp()),
                );
                Ok(x.transpose() * w)
            }
            Self::Constant => {
                check_dim("observation", 0, obs.value.len())?;
                Ok(DVector::zeros(theta.len()))
            }
        }
    }

    /// `λ_g`: exact smallest eigenvalue of `HᵀR⁻¹H` for Gaussian
    /// observations, zero for the GLM and constant families.
    pub fn strong_logconcavity_parameter(&self) -> f64 {
        match self {
            Self::GaussianLinear(g) => g.lambda_g,
            _ => 0.0,
        }
    }

    /// Draw `y_k` given the signal value at step `k`.
    pub fn sample_observation<R: Rng + ?Sized>(
        &self,
        theta: &DVector<f64>,
        step: usize,
        rng: &mut R,
    ) -> Result<Observation> {
        let value = match self {
            Self::GaussianLinear(g) => {
                check_dim("state", g.h.ncols(), theta.len())?;
                let z = DVector::from_fn(g.h.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
                &g.h * theta + &g.r_factor * z
            }
            Self::LogisticGlm(c) => {
                let x = c.at(step)?;
                check_dim("state", x.ncols(), theta.len())?;
                (x * theta).map(|e| if rng.random::<f64>() < sigmoid(e) { 1.0 } else { 0.0 })
            }
            Self::PoissonGlm(c) => {
                let x = c.at(step)?;
                check_dim("state", x.ncols(), theta.len())?;
                let eta = x * theta;
                let mut out = DVector::zeros(eta.len());
                for (o, e) in out.iter_mut().zip(eta.iter()) {
                    let rate = e.exp();
                    let dist = Poisson::new(rate)
                        .map_err(|_| Error::Numeric(format!("invalid Poisson rate {rate}")))?;
                    *o = dist.sample(rng);
                }
                out
            }
            Self::Constant => DVector::zeros(0),
        };
        Ok(Observation::new(step, value))
    }

    /// Likelihood of two independent copies observed separately, acting on
    /// the stacked state `(θ, ϑ)`.
    pub fn tensor_double(&self) -> Result<LikelihoodModel> {
        match self {
            Self::GaussianLinear(g) => Self::gaussian(
                linalg::block_diag(&g.h, &g.h),
                linalg::block_diag(&g.r, &g.r),
            ),
            Self::LogisticGlm(c) => Ok(Self::LogisticGlm(c.map(|x| linalg::block_diag(x, x)))),
            Self::PoissonGlm(c) => Ok(Self::PoissonGlm(c.map(|x| linalg::block_diag(x, x)))),
            Self::Constant => Ok(Self::Constant),
        }
    }
}

pub fn log_g(model: &LikelihoodModel, theta: &DVector<f64>, obs: &Observation) -> Result<f64> {
    model.log_g(theta, obs)
}

pub fn grad_log_g(
    model: &LikelihoodModel,
    theta: &DVector<f64>,
    obs: &Observation,
) -> Result<DVector<f64>> {
    model.grad_log_g(theta, obs)
}

pub fn strong_logconcavity_parameter(model: &LikelihoodModel) -> f64 {
    model.strong_logconcavity_parameter()
}
