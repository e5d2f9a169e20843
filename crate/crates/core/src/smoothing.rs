//! Backward smoothing weights on a fixed 1-D grid.
//!
//! With `Q_k f = g_{k-1} · P_Δ f`, `η_0 = μ_0`, `η_k = π_{k-1} P_Δ` and
//! `ς_k = η_k g_k`, the finite-horizon weights
//!
//! ```text
//! φ_{k,k} = g_k,   φ_{j,k} = g_j · P_Δ φ_{j+1,k},   φ̂_{j,k} = φ_{j,k} / η_j φ_{j,k}
//! ```
//!
//! satisfy `Q_j φ̂_{j,k} = ς_{j-1} φ̂_{j-1,k}` exactly; on the grid the
//! relation holds up to quadrature error. Reweighting `π_k` by
//! `P_Δ φ_{k+1,k+L}` gives the smoothing law conditioned on `L` further
//! observations, which defines the weighted distance `W_{q,k}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::grid::{log_trapezoid_weights, logsumexp, pull_function, push_density, GridDensity, ScalarKernel, LEAKAGE_LIMIT};
use crate::likelihood::{LikelihoodModel, Observation};
use crate::signal::{discretize, ModelParams};
use crate::transport::wq_grid_1d;

/// `log φ_{j,k}` on the grid; `log_normalizer` is `log η_j φ_{j,k}` once
/// normalized against a [`SmoothingState`] (zero before).
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardWeight {
    pub j: usize,
    pub k: usize,
    pub log_phi: Vec<f64>,
    pub log_normalizer: f64,
}

impl BackwardWeight {
    pub fn log_normalized(&self) -> Vec<f64> {
        self.log_phi.iter().map(|v| v - self.log_normalizer).collect()
    }
}

fn as_grid(nodes: &[f64], log_values: Vec<f64>) -> Result<GridDensity> {
    GridDensity::new(nodes.to_vec(), log_values, false)
}

pub fn log_g_on_grid(model: &LikelihoodModel, obs: &Observation, nodes: &[f64]) -> Result<Vec<f64>> {
    if matches!(model, LikelihoodModel::Constant) {
        return Ok(vec![0.0; nodes.len()]);
    }
    nodes.iter().map(|&x| model.log_g(&DVector::from_element(1, x), obs)).collect()
}

fn kernel_for(params: &ModelParams) -> Result<ScalarKernel> {
    if params.dim() != 1 {
        return Err(Error::DimensionMismatch { context: "smoothing state dimension", expected: 1, found: params.dim() });
    }
    ScalarKernel::from_transition(&discretize(params, params.delta)?)
}

fn obs_at(observations: &[Observation], i: usize) -> Result<&Observation> {
    observations
        .get(i)
        .ok_or_else(|| Error::InvalidParameter(format!("no observation for step {i}")))
}

/// `φ_{j,k}, φ_{j+1,k}, …, φ_{k,k}` from one backward pass; entry `i` of
/// the result is `φ_{j+i,k}`. `observations[i]` must be `y_i`.
pub fn phi_sequence(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    j: usize,
    k: usize,
    nodes: &[f64],
) -> Result<Vec<BackwardWeight>> {
    if j > k {
        return Err(Error::InvalidParameter(format!("need j <= k, got j = {j}, k = {k}")));
    }
    let kernel = kernel_for(params)?;
    let mut out = Vec::with_capacity(k - j + 1);
    let mut current = log_g_on_grid(likelihood, obs_at(observations, k)?, nodes)?;
    out.push(BackwardWeight { j: k, k, log_phi: current.clone(), log_normalizer: 0.0 });
    for i in (j..k).rev() {
        let pulled = pull_function(&as_grid(nodes, current)?, kernel, nodes)?;
        let lg = log_g_on_grid(likelihood, obs_at(observations, i)?, nodes)?;
        current = pulled.iter().zip(&lg).map(|(a, b)| a + b).collect();
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite backward weight at step {i}")));
        }
        out.push(BackwardWeight { j: i, k, log_phi: current.clone(), log_normalizer: 0.0 });
    }
    out.reverse();
    Ok(out)
}

pub fn phi_backward(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    j: usize,
    k: usize,
    nodes: &[f64],
) -> Result<BackwardWeight> {
    Ok(phi_sequence(params, likelihood, observations, j, k, nodes)?.swap_remove(0))
}

/// Forward quantities `η_k`, `π_k` and `ς_k` for the reference law `μ_0`.
#[derive(Debug, Clone)]
pub struct SmoothingState {
    pub reference_init: GridDensity,
    pub eta_seq: Vec<GridDensity>,
    pub filter_seq: Vec<GridDensity>,
    pub log_varsigma: Vec<f64>,
    kernel: ScalarKernel,
}

impl SmoothingState {
    pub fn build(
        params: &ModelParams,
        likelihood: &LikelihoodModel,
        observations: &[Observation],
        reference_init: &GridDensity,
    ) -> Result<Self> {
        let kernel = kernel_for(params)?;
        let nodes = &reference_init.nodes;
        let mut eta_seq = Vec::with_capacity(observations.len());
        let mut filter_seq = Vec::with_capacity(observations.len());
        let mut log_varsigma = Vec::with_capacity(observations.len());
        let mut eta = reference_init.normalize()?;
        for (k, obs) in observations.iter().enumerate() {
            if k > 0 {
                eta = push_density(&filter_seq[k - 1], kernel, nodes.clone(), LEAKAGE_LIMIT)?.normalize()?;
            }
            let lg = log_g_on_grid(likelihood, obs, nodes)?;
            let joint = as_grid(nodes, eta.log_values.iter().zip(&lg).map(|(a, b)| a + b).collect())?;
            log_varsigma.push(joint.log_mass());
            filter_seq.push(joint.normalize()?);
            eta_seq.push(eta.clone());
        }
        Ok(Self { reference_init: reference_init.clone(), eta_seq, filter_seq, log_varsigma, kernel })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.reference_init.nodes
    }

    pub fn varsigma(&self, k: usize) -> f64 {
        self.log_varsigma[k].exp()
    }

    /// Set `log_normalizer = log η_j φ_{j,k}`.
    pub fn normalize_weight(&self, weight: &mut BackwardWeight) -> Result<()> {
        let eta = self
            .eta_seq
            .get(weight.j)
            .ok_or_else(|| Error::InvalidParameter(format!("no η for step {}", weight.j)))?;
        check_dim("backward weight", eta.len(), weight.log_phi.len())?;
        let w = log_trapezoid_weights(&eta.nodes);
        weight.log_normalizer = logsumexp((0..eta.len()).map(|i| w[i] + eta.log_values[i] + weight.log_phi[i]));
        Ok(())
    }

    /// `log Q_j f = log g_{j-1} + log P_Δ f` on the grid.
    pub fn apply_q(
        &self,
        likelihood: &LikelihoodModel,
        observations: &[Observation],
        j: usize,
        log_f: &[f64],
    ) -> Result<Vec<f64>> {
        if j == 0 {
            return Err(Error::InvalidParameter("Q_j needs j >= 1".into()));
        }
        let nodes = self.nodes();
        let pulled = pull_function(&as_grid(nodes, log_f.to_vec())?, self.kernel, nodes)?;
        let lg = log_g_on_grid(likelihood, obs_at(observations, j - 1)?, nodes)?;
        Ok(pulled.iter().zip(&lg).map(|(a, b)| a + b).collect())
    }
}

/// `sup |Q_j φ̂_{j,k} - ς_{j-1} φ̂_{j-1,k}| / (1 + |ς_{j-1} φ̂_{j-1,k}|)` over the grid,
/// for normalized weights `phi_j` (`φ_{j,k}`) and `phi_prev` (`φ_{j-1,k}`).
pub fn eigen_residual(
    state: &SmoothingState,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    phi_j: &BackwardWeight,
    phi_prev: &BackwardWeight,
) -> Result<f64> {
    if phi_j.j == 0 || phi_prev.j + 1 != phi_j.j || phi_prev.k != phi_j.k {
        return Err(Error::InvalidParameter("weights must be φ_{j,k} and φ_{j-1,k}".into()));
    }
    let lhs = state.apply_q(likelihood, observations, phi_j.j, &phi_j.log_normalized())?;
    let log_s = state.log_varsigma[phi_prev.j];
    let rhs = phi_prev.log_normalized();
    let mut worst: f64 = 0.0;
    for (l, r) in lhs.iter().zip(&rhs) {
        let rv = (r + log_s).exp();
        let lv = l.exp();
        worst = worst.max((lv - rv).abs() / (1.0 + rv.abs()));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogConcavityReport {
    pub max_second_difference: f64,
    pub pass: bool,
}

/// Largest undivided second difference of `log f + λ_g θ² / 2` on a uniform
/// grid; log-concavity with offset `λ_g` means it is never positive, up to
/// `1e-6`. Nodes with `log f = -∞` are skipped.
pub fn logconcavity_check(nodes: &[f64], log_values: &[f64], lambda_g: f64) -> Result<LogConcavityReport> {
    check_dim("log values", nodes.len(), log_values.len())?;
    if nodes.len() < 3 {
        return Err(Error::InvalidParameter("need at least three nodes".into()));
    }
    let h = (nodes[nodes.len() - 1] - nodes[0]) / (nodes.len() - 1) as f64;
    if nodes.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidParameter("log-concavity check needs a uniform grid".into()));
    }
    let shifted: Vec<f64> = nodes
        .iter()
        .zip(log_values)
        .map(|(x, v)| v + 0.5 * lambda_g * x * x)
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for w in shifted.windows(3) {
        if w.iter().all(|v| v.is_finite()) {
            worst = worst.max(w[0] - 2.0 * w[1] + w[2]);
        }
    }
    Ok(LogConcavityReport { max_second_difference: worst, pass: worst <= 1e-6 })
}

/// `W_q` between `π_a · w / π_a w` and `π_b · w / π_b w`, both densities on
/// the same nodes as `log_weight`.
pub fn weighted_wasserstein(pi_a: &GridDensity, pi_b: &GridDensity, log_weight: &[f64], q: f64) -> Result<f64> {
    let reweight = |pi: &GridDensity| -> Result<GridDensity> {
        check_dim("weight", pi.len(), log_weight.len())?;
        if log_weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("weight must be strictly positive and finite".into()));
        }
        let g = GridDensity::new(pi.nodes.clone(), pi.log_values.iter().zip(log_weight).map(|(a, b)| a + b).collect(), false)?;
        if !g.log_mass().is_finite() {
            return Err(Error::Numeric("reweighted mass is zero or infinite".into()));
        }
        g.normalize()
    };
    wq_grid_1d(&reweight(pi_a)?, &reweight(pi_b)?, q)
}

/// `δ_θ R_{1,k} ⋯ R_{k,k}` on the grid, from `weights[i] = φ_{i+1,k}`.
pub fn r_kernel_compose(
    params: &ModelParams,
    weights: &[BackwardWeight],
    theta: f64,
    nodes: &[f64],
) -> Result<GridDensity> {
    let kernel = kernel_for(params)?;
    if kernel.var == 0.0 {
        return Err(Error::InvalidParameter("kernel composition needs transition noise".into()));
    }
    let mut rho: Option<GridDensity> = None;
    for w in weights {
        check_dim("backward weight", nodes.len(), w.log_phi.len())?;
        let next = match &rho {
            None => {
                let m = kernel.a + kernel.b * theta;
                let lv = nodes
                    .iter()
                    .zip(&w.log_phi)
                    .map(|(&v, lp)| -0.5 * (v - m) * (v - m) / kernel.var + lp)
                    .collect();
                as_grid(nodes, lv)?
            }
            Some(prev) => {
                let pulled = pull_function(&as_grid(nodes, w.log_phi.clone())?, kernel, nodes)?;
                let divided = as_grid(nodes, prev.log_values.iter().zip(&pulled).map(|(a, b)| a - b).collect())?;
                let pushed = push_density(&divided, kernel, nodes.to_vec(), LEAKAGE_LIMIT)?;
                as_grid(nodes, pushed.log_values.iter().zip(&w.log_phi).map(|(a, b)| a + b).collect())?
            }
        };
        rho = Some(next.normalize()?);
    }
    rho.ok_or_else(|| Error::InvalidParameter("need at least one backward weight".into()))
}

/// `|vᵀFv + (u-v)ᵀS(u-v) - uᵀCu - zᵀ(F+S)z|` with `C = F(F+S)⁻¹S` and
/// `z = v - (F+S)⁻¹Su`.
pub fn matrix_identity_check(f: &DMatrix<f64>, s: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let p = f.nrows();
    for (name, n) in [("F columns", f.ncols()), ("S rows", s.nrows()), ("S columns", s.ncols()), ("u", u.len()), ("v", v.len())] {
        check_dim(name, p, n)?;
    }
    let sum = f + s;
    let lu = sum.clone().lu();
    let su = s * u;
    let solved = lu.solve(&su).ok_or_else(|| Error::Numeric("F + S is singular".into()))?;
    let inv_s = lu.solve(s).ok_or_else(|| Error::Numeric("F + S is singular".into()))?;
    let c = f * inv_s;
    let z = v - solved;
    let d = u - v;
    let lhs = v.dot(&(f * v)) + d.dot(&(s * &d));
    let rhs = u.dot(&(&c * u)) + z.dot(&(&sum * &z));
    Ok((lhs - rhs).abs())
}

/// `V(θ) = 1 + c|θ|`.
pub fn lyapunov(theta: f64, c: f64) -> f64 {
    1.0 + c * theta.abs()
}

/// `sup_θ |f(θ) - g(θ)| / e^{V(θ)}` over the grid, from log values.
pub fn ev_norm_distance(nodes: &[f64], log_f: &[f64], log_g: &[f64], c: f64) -> f64 {
    nodes
        .iter()
        .zip(log_f.iter().zip(log_g))
        .map(|(&x, (a, b))| (a.exp() - b.exp()).abs() / lyapunov(x, c).exp())
        .fold(0.0, f64::max)
}

/// `‖φ̂_{j,k+ℓ} - φ̂_{j,k+ℓ+1}‖_{e^V}` for `ℓ = 0 … max_ell - 1`.
#[allow(clippy::too_many_arguments)]
pub fn cauchy_decay(
    state: &SmoothingState,
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    j: usize,
    k: usize,
    max_ell: usize,
    c: f64,
) -> Result<Vec<f64>> {
    let nodes = state.nodes();
    let mut prev: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(max_ell);
    for ell in 0..=max_ell {
        let mut w = phi_backward(params, likelihood, observations, j, k + ell, nodes)?;
        state.normalize_weight(&mut w)?;
        let cur = w.log_normalized();
        if let Some(p) = &prev {
            out.push(ev_norm_distance(nodes, p, &cur, c));
        }
        prev = Some(cur);
    }
    Ok(out)
}

/// Weighted distances `W_{q,k}(π_k^μ, π_k^ν)` for `k = 0 … k_max`, each
/// reweighted by `P_Δ φ_{k+1,k+L}`.
#[derive(Debug, Clone)]
pub struct WeightedContraction {
    pub distances: Vec<f64>,
    /// `W_{q,0}` recomputed with horizon `k + L` for each `k`; its spread
    /// against `distances[0]` measures the horizon truncation.
    pub base_at_horizon: Vec<f64>,
}

impl WeightedContraction {
    pub fn truncation(&self) -> f64 {
        let d0 = self.distances[0];
        self.base_at_horizon.iter().map(|b| (b - d0).abs() / d0).fold(0.0, f64::max)
    }
}

/// Log of `P_Δ φ_{k+1,k+L}` on the nodes.
fn forward_weight(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    k: usize,
    horizon: usize,
    nodes: &[f64],
) -> Result<Vec<f64>> {
    let kernel = kernel_for(params)?;
    let phi = phi_backward(params, likelihood, observations, k + 1, k + horizon, nodes)?;
    pull_function(&as_grid(nodes, phi.log_phi)?, kernel, nodes)
}

/// Log weights `P_Δ φ_{1,T}, P_Δ φ_{2,T}, …` for a fixed final step `T`,
/// where entry `i` reweights `π_i`.
fn fixed_horizon_weights(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    last: usize,
    nodes: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let kernel = kernel_for(params)?;
    let seq = phi_sequence(params, likelihood, observations, 1, last, nodes)?;
    seq.iter()
        .map(|w| pull_function(&as_grid(nodes, w.log_phi.clone())?, kernel, nodes))
        .collect()
}

/// Filters `π_k^μ`, `π_k^ν` on the fixed grid of `mu` (and `nu`), then the
/// weighted distances with horizon `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_contraction(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    mu: &GridDensity,
    nu: &GridDensity,
    k_max: usize,
    horizon: usize,
    q: f64,
) -> Result<WeightedContraction> {
    if mu.nodes != nu.nodes {
        return Err(Error::InvalidParameter("μ and ν must share grid nodes".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidParameter("smoothing horizon must be positive".into()));
    }
    let needed = k_max + horizon + 1;
    if observations.len() < needed {
        return Err(Error::InvalidParameter(format!("need {needed} observations, got {}", observations.len())));
    }
    let nodes = &mu.nodes;
    let obs_filter = &observations[..=k_max];
    let state_mu = SmoothingState::build(params, likelihood, obs_filter, mu)?;
    let state_nu = SmoothingState::build(params, likelihood, obs_filter, nu)?;
    let rows = (0..=k_max)
        .into_par_iter()
        .map(|k| {
            let w = forward_weight(params, likelihood, observations, k, horizon, nodes)?;
            let d = weighted_wasserstein(&state_mu.filter_seq[k], &state_nu.filter_seq[k], &w, q)?;
            let w0 = forward_weight(params, likelihood, observations, 0, k + horizon, nodes)?;
            let b = weighted_wasserstein(&state_mu.filter_seq[0], &state_nu.filter_seq[0], &w0, q)?;
            Ok((d, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let (distances, base_at_horizon) = rows.into_iter().unzip();
    Ok(WeightedContraction { distances, base_at_horizon })
}

/// Weighted distances for one fixed final step `T = k_max + horizon`: entry
/// `k` reweights `π_k` by `P_Δ φ_{k+1,T}`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_contraction_fixed(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    observations: &[Observation],
    mu: &GridDensity,
    nu: &GridDensity,
    k_max: usize,
    horizon: usize,
    q: f64,
) -> Result<Vec<f64>> {
    let last = k_max + horizon;
    if observations.len() <= last {
        return Err(Error::InvalidParameter(format!("need {} observations, got {}", last + 1, observations.len())));
    }
    let nodes = &mu.nodes;
    let state_mu = SmoothingState::build(params, likelihood, &observations[..=k_max], mu)?;
    let state_nu = SmoothingState::build(params, likelihood, &observations[..=k_max], nu)?;
    let weights = fixed_horizon_weights(params, likelihood, observations, last, nodes)?;
    (0..=k_max)
        .map(|k| weighted_wasserstein(&state_mu.filter_seq[k], &state_nu.filter_seq[k], &weights[k], q))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::uniform_nodes;

    #[test]
    fn identity_with_unit_matrices() {
        let i = DMatrix::identity(3, 3);
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let v = DVector::from_vec(vec![0.3, 0.1, 4.0]);
        assert!(matrix_identity_check(&i, &i, &u, &v).unwrap() <= 1e-12);
        assert!(matrix_identity_check(&i, &i, &u, &u).unwrap() <= 1e-12);
    }

    #[test]
    fn singular_sum_rejected() {
        let f = DMatrix::identity(2, 2);
        let s = -DMatrix::identity(2, 2);
        assert!(matrix_identity_check(&f, &s, &DVector::zeros(2), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn gaussian_log_density_is_concave() {
        let nodes = uniform_nodes(-5.0, 5.0, 101);
        let lv: Vec<f64> = nodes.iter().map(|x| -0.5 * x * x).collect();
        let r = logconcavity_check(&nodes, &lv, 0.0).unwrap();
        assert!(r.pass && r.max_second_difference < 0.0);
        let convex: Vec<f64> = nodes.iter().map(|x| 0.5 * x * x).collect();
        assert!(!logconcavity_check(&nodes, &convex, 0.0).unwrap().pass);
    }

    #[test]
    fn flat_weights_for_constant_likelihood() {
        let params = ModelParams::isotropic(1, 0.5, 1.0, 1.0).unwrap();
        let nodes = uniform_nodes(-6.0, 6.0, 241);
        let obs: Vec<Observation> = (0..4).map(Observation::empty).collect();
        let w = phi_backward(&params, &LikelihoodModel::Constant, &obs, 0, 3, &nodes).unwrap();
        assert!(w.log_phi.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn unit_weight_is_plain_distance() {
        let nodes = uniform_nodes(-10.0, 10.0, 801);
        let a = GridDensity::gaussian(nodes.clone(), 0.0, 1.0).unwrap();
        let b = GridDensity::gaussian(nodes.clone(), 1.0, 1.0).unwrap();
        let plain = wq_grid_1d(&a, &b, 1.0).unwrap();
        let weighted = weighted_wasserstein(&a, &b, &vec![0.0; nodes.len()], 1.0).unwrap();
        assert!((plain - weighted).abs() < 1e-12);
        assert_eq!(weighted_wasserstein(&a, &a, &vec![0.0; nodes.len()], 2.0).unwrap(), 0.0);
    }
}
