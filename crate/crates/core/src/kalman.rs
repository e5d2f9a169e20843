//! Exact filtering for linear-Gaussian observations and the closed-form
//! 2-Wasserstein distance between Gaussian laws.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{LikelihoodModel, Observation};
use crate::linalg::{self, sym_sqrt, symmetrize};
use crate::signal::{discretize, DiscreteTransition, ModelParams};

/// Gaussian filter law; a zero covariance stands for a Dirac mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        check_dim("covariance rows", p, cov.nrows())?;
        check_dim("covariance columns", p, cov.ncols())?;
        if !linalg::all_finite(mean.iter()) || !linalg::all_finite(cov.iter()) {
            return Err(Error::InvalidParameter("non-finite belief".into()));
        }
        if linalg::asymmetry(&cov) > 1e-12 {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
        if p > 0 {
            let (lo, hi) = linalg::sym_extreme_eigenvalues(&cov);
            if lo < -1e-10 * hi.max(0.0) - f64::MIN_POSITIVE {
                return Err(Error::InvalidParameter("covariance is not positive semidefinite".into()));
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dirac(point: DVector<f64>) -> Self {
        let p = point.len();
        Self { mean: point, cov: DMatrix::zeros(p, p) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn predict(belief: &GaussianBelief, transition: &DiscreteTransition) -> Result<GaussianBelief> {
    check_dim("belief", transition.dim(), belief.dim())?;
    let mean = transition.mean_from(&belief.mean);
    let cov = symmetrize(&(&transition.b * &belief.cov * transition.b.transpose() + &transition.noise_cov));
    Ok(GaussianBelief { mean, cov })
}

/// Conjugate update with the Joseph-form covariance.
///
/// The constant likelihood leaves the belief untouched; GLM likelihoods are
/// not conjugate and are rejected.
pub fn update(belief: &GaussianBelief, model: &LikelihoodModel, obs: &Observation) -> Result<GaussianBelief> {
    let g = match model {
        LikelihoodModel::Constant => return Ok(belief.clone()),
        LikelihoodModel::GaussianLinear(g) => g,
        other => return Err(Error::UnsupportedKind(other.kind_name())),
    };
    let h = g.h();
    check_dim("state", h.ncols(), belief.dim())?;
    check_dim("observation", h.nrows(), obs.value.len())?;
    let p = belief.dim();
    let ph_t = &belief.cov * h.transpose();
    let innovation_cov = symmetrize(&(h * &ph_t + g.r()));
    let chol = innovation_cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("singular innovation covariance".into()))?;
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let residual = &obs.value - h * &belief.mean;
    let mean = &belief.mean + &gain * residual;
    let i_kh = DMatrix::<f64>::identity(p, p) - &gain * h;
    let cov = symmetrize(&(&i_kh * &belief.cov * i_kh.transpose() + &gain * g.r() * gain.transpose()));
    Ok(GaussianBelief { mean, cov })
}

/// `W₂` between two Gaussians via the Bures formula.
pub fn gaussian_w2(b1: &GaussianBelief, b2: &GaussianBelief) -> Result<f64> {
    check_dim("belief", b1.dim(), b2.dim())?;
    for cov in [&b1.cov, &b2.cov] {
        if linalg::asymmetry(cov) > 1e-12 {
            return Err(Error::InvalidParameter("covariance is not symmetric".into()));
        }
    }
    let mean_gap = (&b1.mean - &b2.mean).norm();
    // Identical covariances make the Bures term vanish exactly; the generic
    // path would add square-root round-off of order 1e-8.
    if b1.cov == b2.cov {
        return Ok(mean_gap);
    }
    let root2 = sym_sqrt(&b2.cov);
    let cross = sym_sqrt(&(&root2 * &b1.cov * &root2));
    let bures = (b1.cov.trace() + b2.cov.trace() - 2.0 * cross.trace()).max(0.0);
    Ok((mean_gap * mean_gap + bures).sqrt())
}

/// Filter laws `π_0 … π_k`: the step-0 update comes first, then each later
/// observation is preceded by one prediction over `Δ`.
pub fn filter_run(
    init: &GaussianBelief,
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
) -> Result<Vec<GaussianBelief>> {
    let transition = discretize(params, params.delta)?;
    filter_run_with(init, &transition, likelihood, observations)
}

pub fn filter_run_with(
    init: &GaussianBelief,
    transition: &DiscreteTransition,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
) -> Result<Vec<GaussianBelief>> {
    let mut out = Vec::with_capacity(observations.len());
    let mut current = init.clone();
    for (k, obs) in observations.iter().enumerate() {
        if k > 0 {
            current = predict(&current, transition)?;
        }
        current = update(&current, likelihood, obs)?;
        out.push(current.clone());
    }
    Ok(out)
}
