use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Scenario};
use super::report::ReportRow;
use crate::coupling::{backward_potential, pathwise_contraction_check, simulate_coupled};
use crate::error::{check_dim, Error, Result};
use crate::grid::{uniform_nodes, GridDensity};
use crate::kalman::{filter_run, gaussian_w2, GaussianBelief};
use crate::likelihood::{LikelihoodModel, Observation};
use crate::linalg::stack;
use crate::particle::{pf_run, InitSampler, ParticleCloud};
use crate::rates::{isotropic_step_exponent, RateModel, RateProfile};
use crate::signal::{discretize, sample_step, tensor_double, ModelParams};
use crate::smoothing::weighted_contraction;
use crate::transport::{coupling_cost, sliced_wq, wq_1d, wq_block_sort};

const STREAM_MODEL: u64 = 1 << 32;
const STREAM_LIKELIHOOD: u64 = 2 << 32;
const STREAM_OBS: u64 = 3 << 32;
const STREAM_PARTICLES: u64 = 4 << 32;
const STREAM_COUPLING: u64 = 5 << 32;
const STREAM_PROJECTIONS: u64 = 6 << 32;

/// Bound-factor agreement required between a model and its doubled copy.
const TENSOR_FACTOR_TOL: f64 = 1e-12;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    rng_for(seed, stream).next_u64()
}

#[derive(Debug, Default)]
pub(crate) struct Outcome {
    pub rows: Vec<ReportRow>,
    pub diagnostics: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    pub table: Vec<BTreeMap<String, f64>>,
}

/// Simulate the signal from `true_init` at steps `0..=k` and draw one
/// observation per step.
pub fn generate_observations(
    params: &ModelParams,
    likelihood: &LikelihoodModel,
    true_init: &DVector<f64>,
    k: usize,
    seed: u64,
) -> Result<Vec<Observation>> {
    check_dim("true initial state", params.dim(), true_init.len())?;
    let transition = discretize(params, params.delta)?;
    let mut rng = rng_for(seed, STREAM_OBS);
    let mut x = true_init.clone();
    let mut out = Vec::with_capacity(k + 1);
    for step in 0..=k {
        if step > 0 {
            x = sample_step(&transition, &x, &mut rng)?;
        }
        out.push(likelihood.sample_observation(&x, step, &mut rng)?);
    }
    Ok(out)
}

pub(crate) fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.scenario {
        Scenario::KalmanContraction => kalman_contraction(cfg),
        Scenario::PfLogisticContraction => pf_contraction(cfg),
        Scenario::TensorInvariance => tensor_invariance(cfg),
        Scenario::Tightness => tightness(cfg),
        Scenario::CouplingPathwise => coupling_pathwise(cfg),
        Scenario::SmoothingTheorem2 => smoothing_theorem2(cfg),
        Scenario::RateTable => rate_table(cfg),
    }
}

fn build(cfg: &ExperimentConfig, n_steps: usize) -> Result<(ModelParams, LikelihoodModel)> {
    let params = cfg.model.build(&mut rng_for(cfg.seed, STREAM_MODEL))?;
    let lik = cfg.likelihood.build(params.dim(), n_steps, &mut rng_for(cfg.seed, STREAM_LIKELIHOOD))?;
    Ok((params, lik))
}

fn point_or(v: &Option<Vec<f64>>, p: usize, default: f64) -> Result<DVector<f64>> {
    match v {
        Some(x) if x.len() == p => Ok(DVector::from_vec(x.clone())),
        Some(x) if 2 * x.len() == p => {
            let half = DVector::from_vec(x.clone());
            Ok(stack(&half, &half))
        }
        Some(x) => Err(Error::Config(format!("point of length {} does not fit dimension {p}", x.len()))),
        None => Ok(DVector::from_element(p, default)),
    }
}

/// `θ`, `ϑ` (default `±𝟙/√p`) and the signal's true starting value.
fn points(cfg: &ExperimentConfig, p: usize) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let u = 1.0 / (p as f64).sqrt();
    let o = &cfg.options;
    Ok((point_or(&o.theta, p, u)?, point_or(&o.vartheta, p, -u)?, point_or(&o.true_init, p, 0.0)?))
}

fn profile(params: &ModelParams, lik: &LikelihoodModel, k: usize) -> Result<RateProfile> {
    RateModel::new(params)?.cumulative_bound(&vec![lik.strong_logconcavity_parameter(); k])
}

fn kalman_distances(
    params: &ModelParams,
    lik: &LikelihoodModel,
    theta: &DVector<f64>,
    vartheta: &DVector<f64>,
    obs: &[Observation],
) -> Result<Vec<f64>> {
    let a = filter_run(&GaussianBelief::dirac(theta.clone()), params, lik, obs)?;
    let b = filter_run(&GaussianBelief::dirac(vartheta.clone()), params, lik, obs)?;
    a.iter().zip(&b).map(|(x, y)| gaussian_w2(x, y)).collect()
}

fn columnwise_max(runs: &[Vec<f64>]) -> Vec<f64> {
    (0..runs[0].len())
        .map(|s| runs.iter().map(|r| r[s]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn worst_ratio(rows: &[ReportRow]) -> f64 {
    rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max)
}

fn kalman_contraction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    let (theta, vartheta, x0) = points(cfg, params.dim())?;
    let prof = profile(&params, &lik, cfg.k)?;
    let d0 = (&theta - &vartheta).norm();
    let runs = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let obs = generate_observations(&params, &lik, &x0, cfg.k, derive_seed(cfg.seed, STREAM_OBS + r))?;
            kalman_distances(&params, &lik, &theta, &vartheta, &obs)
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = cfg.tolerance();
    let rows: Vec<ReportRow> = columnwise_max(&runs)
        .into_iter()
        .enumerate()
        .map(|(s, d)| {
            let bound = prof.bound_factor(s) * d0;
            ReportRow::new(s, d, bound, d <= bound + tol)
        })
        .collect();
    let mut out = Outcome::default();
    out.diagnostics.insert("worst_ratio".into(), worst_ratio(&rows));
    out.diagnostics.insert("lambda_sig".into(), RateModel::new(&params)?.lambda_sig());
    out.rows = rows;
    Ok(out)
}

/// Empirical `W_q` in one dimension; above that, the cheaper of two
/// explicit couplings (index pairing and block sort), which is an upper
/// bound on the empirical `W_q`.
fn cloud_distance(a: &ParticleCloud, b: &ParticleCloud, q: f64) -> Result<f64> {
    if a.dim() == 1 {
        return wq_1d(&a.first_coordinates(), &b.first_coordinates(), q);
    }
    let identity: Vec<usize> = (0..a.len()).collect();
    let by_index = coupling_cost(&a.points, &b.points, &identity, q)?;
    let by_blocks = wq_block_sort(&a.points, &b.points, q)?.cost;
    Ok(by_index.min(by_blocks))
}

fn pf_contraction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    let p = params.dim();
    let (theta, vartheta, x0) = points(cfg, p)?;
    let prof = profile(&params, &lik, cfg.k)?;
    let d0 = (&theta - &vartheta).norm();
    let obs = generate_observations(&params, &lik, &x0, cfg.k, derive_seed(cfg.seed, STREAM_OBS))?;
    let pf_seed = derive_seed(cfg.seed, STREAM_PARTICLES);
    let proj_seed = derive_seed(cfg.seed, STREAM_PROJECTIONS);
    let n_proj = cfg.options.projections;
    // Both filters of a replicate share seed and stream.
    let runs = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let a = pf_run(&InitSampler::Dirac(theta.clone()), &params, &lik, &obs, cfg.particles, pf_seed, r)?;
            let b = pf_run(&InitSampler::Dirac(vartheta.clone()), &params, &lik, &obs, cfg.particles, pf_seed, r)?;
            let dist = a.iter().zip(&b).map(|(x, y)| cloud_distance(x, y, cfg.q)).collect::<Result<Vec<_>>>()?;
            let sliced = if r == 0 && p > 1 && n_proj > 0 {
                Some(
                    a.iter()
                        .zip(&b)
                        .map(|(x, y)| sliced_wq(&x.points, &y.points, cfg.q, n_proj, proj_seed))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            Ok((dist, sliced))
        })
        .collect::<Result<Vec<_>>>()?;
    let tol = cfg.tolerance();
    let mut out = Outcome::default();
    let mut p90 = Vec::with_capacity(cfg.k + 1);
    for s in 0..=cfg.k {
        let mut col: Vec<f64> = runs.iter().map(|(d, _)| d[s]).collect();
        col.sort_by(f64::total_cmp);
        let median = quantile(&col, 0.5);
        p90.push(quantile(&col, 0.9));
        let bound = prof.bound_factor(s) * d0;
        let pass = s < cfg.options.check_from || median <= bound * (1.0 + tol);
        out.rows.push(ReportRow::new(s, median, bound, pass));
    }
    out.series.insert("p90_distance".into(), p90);
    if let Some(sliced) = runs.into_iter().next().and_then(|(_, s)| s) {
        out.series.insert("sliced_lower_bound_replicate0".into(), sliced);
    }
    let checked: Vec<ReportRow> = out.rows.iter().filter(|r| r.k >= cfg.options.check_from).cloned().collect();
    out.diagnostics.insert("worst_checked_ratio".into(), worst_ratio(&checked));
    Ok(out)
}

fn tensor_invariance(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    let doubled = tensor_double(&params);
    let lik2 = lik.tensor_double()?;
    let base = profile(&params, &lik, cfg.k)?;
    let twin = profile(&doubled, &lik2, cfg.k)?;
    let (theta, vartheta, x0) = points(cfg, params.dim())?;
    let (theta2, vartheta2, x02) = points(cfg, doubled.dim())?;
    let x02 = if cfg.options.true_init.is_some() { x02 } else { stack(&x0, &x0) };
    let d0 = (&theta - &vartheta).norm();
    let d02 = (&theta2 - &vartheta2).norm();
    let runs = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, STREAM_OBS + r);
            let obs = generate_observations(&params, &lik, &x0, cfg.k, seed)?;
            let obs2 = generate_observations(&doubled, &lik2, &x02, cfg.k, seed)?;
            Ok((
                kalman_distances(&params, &lik, &theta, &vartheta, &obs)?,
                kalman_distances(&doubled, &lik2, &theta2, &vartheta2, &obs2)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let base_runs: Vec<Vec<f64>> = runs.iter().map(|(a, _)| a.clone()).collect();
    let twin_runs: Vec<Vec<f64>> = runs.into_iter().map(|(_, b)| b).collect();
    let base_d = columnwise_max(&base_runs);
    let twin_d = columnwise_max(&twin_runs);
    let tol = cfg.tolerance();
    let mut out = Outcome::default();
    let mut diffs = Vec::with_capacity(cfg.k + 1);
    for s in 0..=cfg.k {
        let factor = base.bound_factor(s);
        let diff = (factor - twin.bound_factor(s)).abs();
        diffs.push(diff);
        let bound = factor * d02;
        let pass = diff <= TENSOR_FACTOR_TOL && twin_d[s] <= bound + tol && base_d[s] <= factor * d0 + tol;
        out.rows.push(ReportRow::new(s, twin_d[s], bound, pass));
    }
    out.diagnostics.insert("max_factor_difference".into(), diffs.iter().cloned().fold(0.0, f64::max));
    out.diagnostics.insert("worst_ratio".into(), worst_ratio(&out.rows));
    out.series.insert("factor_difference".into(), diffs);
    out.series.insert("base_distance".into(), base_d);
    Ok(out)
}

fn tightness(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    if params.sigma != 0.0 {
        return Err(Error::Config("tightness needs sigma = 0".into()));
    }
    let (theta, vartheta, x0) = points(cfg, params.dim())?;
    let prof = profile(&params, &lik, cfg.k)?;
    let d0 = (&theta - &vartheta).norm();
    let obs = generate_observations(&params, &lik, &x0, cfg.k, derive_seed(cfg.seed, STREAM_OBS))?;
    let distances = match lik {
        LikelihoodModel::GaussianLinear(_) | LikelihoodModel::Constant => {
            kalman_distances(&params, &lik, &theta, &vartheta, &obs)?
        }
        // Without signal noise a point mass stays a point mass whatever the
        // likelihood, so the filters follow the deterministic flow.
        _ => {
            let tr = discretize(&params, params.delta)?;
            let (mut a, mut b) = (theta.clone(), vartheta.clone());
            let mut d = vec![d0];
            for _ in 0..cfg.k {
                a = tr.mean_from(&a);
                b = tr.mean_from(&b);
                d.push((&a - &b).norm());
            }
            d
        }
    };
    let tol = cfg.tolerance();
    let mut out = Outcome::default();
    for (s, d) in distances.into_iter().enumerate() {
        let bound = prof.bound_factor(s) * d0;
        let pass = bound > 0.0 && (d / bound - 1.0).abs() <= tol;
        out.rows.push(ReportRow::new(s, d, bound, pass));
    }
    let dev = out.rows.iter().filter_map(|r| r.ratio).map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    out.diagnostics.insert("max_ratio_deviation".into(), dev);
    Ok(out)
}

fn coupling_pathwise(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    let (theta, vartheta, x0) = points(cfg, params.dim())?;
    let rm = RateModel::new(&params)?;
    let prof = profile(&params, &lik, cfg.k)?;
    let d0 = (&theta - &vartheta).norm();
    let frac = cfg.options.dt_fraction;
    if !(frac > 0.0 && frac <= 0.01) {
        return Err(Error::Config(format!("dt_fraction must lie in (0, 0.01], got {frac}")));
    }
    let steps = (1.0 / frac).round() as usize;
    let delta = params.delta;
    let dt = delta / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| if i == steps { delta } else { i as f64 * dt }).collect();
    let cumulative = rm.cumulative_exponent_at(lik.strong_logconcavity_parameter(), &times)?;
    let obs = generate_observations(&params, &lik, &x0, cfg.k, derive_seed(cfg.seed, STREAM_OBS))?;
    let potentials = (1..=cfg.k)
        .map(|j| backward_potential(&params, &lik, &obs[j..], steps + 1))
        .collect::<Result<Vec<_>>>()?;
    let c = cfg.options.coupling_c;
    let k = cfg.k as u64;
    // Each path crosses the k observation intervals in turn, driven on
    // interval j by the h-transform built from observations j..k.
    let runs = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let (mut x, mut y) = (theta.clone(), vartheta.clone());
            let mut ends = vec![d0];
            let mut ratios = vec![1.0];
            for (j, pot) in potentials.iter().enumerate() {
                let seed = derive_seed(cfg.seed, STREAM_COUPLING + r * (k + 1) + j as u64);
                let paths = simulate_coupled(&x, &y, pot, &params, dt, seed)?;
                let check = pathwise_contraction_check(&paths, &cumulative, dt, c)?;
                x = paths.path_a.last().cloned().unwrap_or(x);
                y = paths.path_b.last().cloned().unwrap_or(y);
                ends.push((&x - &y).norm());
                ratios.push(check.max_ratio);
            }
            Ok((ends, ratios))
        })
        .collect::<Result<Vec<_>>>()?;
    let ends: Vec<Vec<f64>> = runs.iter().map(|(e, _)| e.clone()).collect();
    let ratios: Vec<Vec<f64>> = runs.into_iter().map(|(_, r)| r).collect();
    let max_end = columnwise_max(&ends);
    let max_ratio = columnwise_max(&ratios);
    let slack = 1.0 + c * dt;
    let mut out = Outcome::default();
    for s in 0..=cfg.k {
        let bound = prof.bound_factor(s) * d0;
        let pass = max_ratio[s] <= slack && max_end[s] <= bound * slack.powi(s as i32);
        out.rows.push(ReportRow::new(s, max_end[s], bound, pass));
    }
    out.diagnostics.insert("dt".into(), dt);
    out.diagnostics.insert("pathwise_tolerance".into(), slack);
    out.diagnostics.insert("worst_interval_ratio".into(), max_ratio.iter().cloned().fold(0.0, f64::max));
    out.series.insert("max_interval_ratio".into(), max_ratio);
    Ok(out)
}

fn smoothing_theorem2(cfg: &ExperimentConfig) -> Result<Outcome> {
    let o = &cfg.options;
    let horizon = o.smoothing_horizon;
    let (params, lik) = build(cfg, cfg.k + horizon + 1)?;
    if params.dim() != 1 {
        return Err(Error::Config("smoothing_theorem2 runs on one-dimensional models".into()));
    }
    let (_, _, x0) = points(cfg, 1)?;
    let prof = profile(&params, &lik, cfg.k)?;
    let obs = generate_observations(&params, &lik, &x0, cfg.k + horizon, derive_seed(cfg.seed, STREAM_OBS))?;
    let nodes = uniform_nodes(-o.grid_half_width, o.grid_half_width, o.grid_nodes);
    let mu = GridDensity::gaussian(nodes.clone(), o.mu_mean, o.init_var)?;
    let nu = GridDensity::gaussian(nodes, o.nu_mean, o.init_var)?;
    let wc = weighted_contraction(&params, &lik, &obs, &mu, &nu, cfg.k, horizon, cfg.q)?;
    let truncation = wc.truncation();
    let truncation_ok = truncation < o.truncation_tol;
    let d0 = wc.distances[0];
    let tol = cfg.tolerance();
    let mut out = Outcome::default();
    for (s, &d) in wc.distances.iter().enumerate() {
        let bound = prof.bound_factor(s) * d0;
        out.rows.push(ReportRow::new(s, d, bound, truncation_ok && d <= bound * (1.0 + tol)));
    }
    out.diagnostics.insert("truncation".into(), truncation);
    out.diagnostics.insert("worst_ratio".into(), worst_ratio(&out.rows));
    out.series.insert("base_at_horizon".into(), wc.base_at_horizon);
    Ok(out)
}

/// `λ` for `β = -λ I`, or `None` for any other slope.
fn isotropic_lambda(params: &ModelParams) -> Option<f64> {
    let b = &params.beta;
    let lambda = -b[(0, 0)];
    let p = params.dim();
    (0..p)
        .all(|i| (0..p).all(|j| b[(i, j)] == if i == j { -lambda } else { 0.0 }))
        .then_some(lambda)
}

fn rate_table(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (params, lik) = build(cfg, cfg.k + 1)?;
    let lambda = isotropic_lambda(&params)
        .ok_or_else(|| Error::Config("rate_table needs beta = -lambda I".into()))?;
    let lg = lik.strong_logconcavity_parameter();
    let (sigma, delta) = (params.sigma, params.delta);
    let tol = cfg.tolerance();
    let mut out = Outcome::default();
    let mut sweep_ok = true;
    let mut sweep_err: f64 = 0.0;
    for &l in &cfg.options.lambdas {
        for &s in &cfg.options.sigmas {
            let m = ModelParams::isotropic(1, l, s, delta)?;
            let computed = RateModel::new(&m)?.step_exponent(lg)?;
            let closed = isotropic_step_exponent(l, s, delta, lg);
            let err = (computed - closed).abs();
            sweep_err = sweep_err.max(err);
            sweep_ok &= err <= tol;
            out.table.push(BTreeMap::from([
                ("lambda".to_string(), l),
                ("sigma".to_string(), s),
                ("delta".to_string(), delta),
                ("lambda_g".to_string(), lg),
                ("step_exponent".to_string(), computed),
                ("closed_form".to_string(), closed),
                ("abs_error".to_string(), err),
            ]));
        }
    }
    // With λ_sig = 0 the k-step factor is (1 + σ²λ_gΔ)^{-k}.
    let mut zero_err: f64 = 0.0;
    for &s in &cfg.options.sigmas {
        let m = ModelParams::isotropic(1, 0.0, s, delta)?;
        let computed = RateModel::new(&m)?.cumulative_bound(&vec![lg; cfg.k])?.bound_factor(cfg.k);
        let product = (1.0 + s * s * lg * delta).powi(-(cfg.k as i32));
        zero_err = zero_err.max((computed - product).abs());
    }
    sweep_ok &= zero_err <= tol;
    let prof = profile(&params, &lik, cfg.k)?;
    let closed_step = isotropic_step_exponent(lambda, sigma, delta, lg);
    for s in 0..=cfg.k {
        let closed = (-(s as f64) * closed_step).exp();
        let log_err = (prof.cumulative_log_bound[s] + s as f64 * closed_step).abs();
        let pass = sweep_ok && log_err <= tol * (s.max(1) as f64);
        out.rows.push(ReportRow::new(s, closed, prof.bound_factor(s), pass));
    }
    out.diagnostics.insert("sweep_max_abs_error".into(), sweep_err);
    out.diagnostics.insert("zero_rate_max_abs_error".into(), zero_err);
    Ok(out)
}
