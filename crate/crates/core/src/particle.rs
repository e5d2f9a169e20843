//! Bootstrap particle filter and the deterministic 1-D grid filter.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::grid::{logsumexp, push_density, uniform_nodes, GridDensity, ScalarKernel, LEAKAGE_LIMIT};
use crate::likelihood::{LikelihoodModel, Observation};
use crate::linalg::psd_factor;
use crate::signal::{discretize, DiscreteTransition, ModelParams};

/// Equal-weight particles, one per row of `points`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub points: DMatrix<f64>,
    pub step: usize,
}

impl ParticleCloud {
    pub fn new(points: DMatrix<f64>, step: usize) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidParameter("a cloud needs at least one point".into()));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite particle".into()));
        }
        Ok(Self { points, step })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.points.row_mean().transpose()
    }

    /// Sample covariance with divisor `N`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let centred = &self.points - DMatrix::from_fn(self.len(), self.dim(), |_, j| mean[j]);
        centred.transpose() * centred / self.len() as f64
    }

    /// First coordinate of every particle (the whole cloud when `p = 1`).
    pub fn first_coordinates(&self) -> Vec<f64> {
        self.points.column(0).iter().cloned().collect()
    }
}

/// How the step-0 particles are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSampler {
    Dirac(DVector<f64>),
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl InitSampler {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dirac(x) => x.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        match self {
            Self::Dirac(x) => Ok(DMatrix::from_fn(n, x.len(), |_, j| x[j])),
            Self::Gaussian { mean, cov } => {
                let p = mean.len();
                check_dim("initial covariance", p, cov.nrows())?;
                let l = psd_factor(cov)?;
                let z = standard_normals(n, p, rng);
                Ok(z * l.transpose() + DMatrix::from_fn(n, p, |_, j| mean[j]))
            }
        }
    }
}

fn standard_normals<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

fn lexicographic(points: &DMatrix<f64>, a: usize, b: usize) -> std::cmp::Ordering {
    for j in 0..points.ncols() {
        let o = points[(a, j)].total_cmp(&points[(b, j)]);
        if o.is_ne() {
            return o;
        }
    }
    std::cmp::Ordering::Equal
}

/// Systematic resampling of the rows of `points` with log-weights
/// `log_w`. Rows are first put in lexicographic order, so the output
/// depends on the multiset of (point, weight) pairs only.
pub fn systematic_resample<R: Rng + ?Sized>(
    points: &DMatrix<f64>,
    log_w: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = points.nrows();
    check_dim("weights", n, log_w.len())?;
    let total = logsumexp(log_w.iter().cloned());
    if !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lexicographic(points, a, b).then(log_w[a].total_cmp(&log_w[b])));
    let w: Vec<f64> = order.iter().map(|&i| (log_w[i] - total).exp()).collect();
    let offset: f64 = rng.random::<f64>();
    let mut out = DMatrix::zeros(n, points.ncols());
    let mut cum = 0.0;
    let mut src = 0;
    for i in 0..n {
        let target = (i as f64 + offset) / n as f64;
        while src + 1 < n && cum + w[src] <= target {
            cum += w[src];
            src += 1;
        }
        out.set_row(i, &points.row(order[src]));
    }
    Ok(out)
}

fn log_weights(points: &DMatrix<f64>, model: &LikelihoodModel, obs: &Observation) -> Result<Vec<f64>> {
    if matches!(model, LikelihoodModel::Constant) {
        return Ok(vec![0.0; points.nrows()]);
    }
    (0..points.nrows())
        .map(|i| model.log_g(&points.row(i).transpose(), obs))
        .collect()
}

fn reweight<R: Rng + ?Sized>(
    points: DMatrix<f64>,
    model: &LikelihoodModel,
    obs: &Observation,
    step: usize,
    rng: &mut R,
) -> Result<ParticleCloud> {
    let lw = log_weights(&points, model, obs)?;
    ParticleCloud::new(systematic_resample(&points, &lw, rng)?, step)
}

/// Propagate through the transition, weight by `g`, resample.
pub fn bootstrap_step<R: Rng + ?Sized>(
    cloud: &ParticleCloud,
    transition: &DiscreteTransition,
    model: &LikelihoodModel,
    obs: &Observation,
    rng: &mut R,
) -> Result<ParticleCloud> {
    let (n, p) = cloud.points.shape();
    check_dim("particle dimension", transition.dim(), p)?;
    let mut next = &cloud.points * transition.b.transpose() + DMatrix::from_fn(n, p, |_, j| transition.a[j]);
    if !transition.is_deterministic() {
        next += standard_normals(n, p, rng) * transition.noise_factor().transpose();
    }
    reweight(next, model, obs, cloud.step + 1, rng)
}

/// Particle approximations of `π_0 … π_k`, one per observation. The
/// generator is ChaCha8 seeded with `seed` on stream `stream`.
pub fn pf_run(
    init: &InitSampler,
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<ParticleCloud>> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one particle".into()));
    }
    check_dim("initial state", params.dim(), init.dim())?;
    let transition = discretize(params, params.delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out: Vec<ParticleCloud> = Vec::with_capacity(observations.len());
    for (k, obs) in observations.iter().enumerate() {
        let cloud = if k == 0 {
            let start = init.sample(n, &mut rng)?;
            reweight(start, likelihood, obs, 0, &mut rng)?
        } else {
            bootstrap_step(&out[k - 1], &transition, likelihood, obs, &mut rng)?
        };
        out.push(cloud);
    }
    Ok(out)
}

/// Multiply a grid density by `g(·, y)` and renormalize.
pub fn grid_update(density: &GridDensity, model: &LikelihoodModel, obs: &Observation) -> Result<GridDensity> {
    let mut log_values = density.log_values.clone();
    if !matches!(model, LikelihoodModel::Constant) {
        for (lv, &x) in log_values.iter_mut().zip(&density.nodes) {
            *lv += model.log_g(&DVector::from_element(1, x), obs)?;
        }
    }
    GridDensity::new(density.nodes.clone(), log_values, false)?.normalize()
}

/// One prediction-update cycle on a fresh grid spanning eight predicted
/// standard deviations either side of the predicted mean.
pub fn grid_filter_step(
    density: &GridDensity,
    transition: &DiscreteTransition,
    model: &LikelihoodModel,
    obs: &Observation,
) -> Result<GridDensity> {
    let kernel = ScalarKernel::from_transition(transition)?;
    let (m, v) = (density.mean(), density.variance());
    let pm = kernel.a + kernel.b * m;
    let ps = (kernel.b * kernel.b * v + kernel.var).sqrt();
    let nodes = uniform_nodes(pm - 8.0 * ps, pm + 8.0 * ps, density.len());
    let predicted = push_density(density, kernel, nodes, LEAKAGE_LIMIT)?;
    grid_update(&predicted, model, obs)
}

/// Grid filter from a density: returns `π_0 … π_k`.
pub fn grid_filter_run(
    init: &GridDensity,
    transition: &DiscreteTransition,
    model: &LikelihoodModel,
    observations: &[Observation],
) -> Result<Vec<GridDensity>> {
    let mut out: Vec<GridDensity> = Vec::with_capacity(observations.len());
    for (k, obs) in observations.iter().enumerate() {
        let next = if k == 0 {
            grid_update(init, model, obs)?
        } else {
            grid_filter_step(&out[k - 1], transition, model, obs)?
        };
        out.push(next);
    }
    Ok(out)
}

/// Grid filter started at a point mass: `π_0` stays a Dirac (no grid
/// representation), so this returns `π_1 … π_k` on `n_nodes` nodes each.
pub fn grid_filter_from_dirac(
    theta: f64,
    transition: &DiscreteTransition,
    model: &LikelihoodModel,
    observations: &[Observation],
    n_nodes: usize,
) -> Result<Vec<GridDensity>> {
    let kernel = ScalarKernel::from_transition(transition)?;
    if kernel.var == 0.0 {
        return Err(Error::InvalidParameter("grid filter from a point mass needs transition noise".into()));
    }
    let mut out: Vec<GridDensity> = Vec::with_capacity(observations.len().saturating_sub(1));
    for obs in observations.iter().skip(1) {
        let next = match out.last() {
            None => {
                let m = kernel.a + kernel.b * theta;
                let s = kernel.var.sqrt();
                let predicted = GridDensity::gaussian(uniform_nodes(m - 8.0 * s, m + 8.0 * s, n_nodes), m, kernel.var)?;
                grid_update(&predicted, model, obs)?
            }
            Some(prev) => grid_filter_step(prev, transition, model, obs)?,
        };
        out.push(next);
    }
    Ok(out)
}
