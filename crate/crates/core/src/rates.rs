//! Contraction rates `λ_h(t)`, `λ(j,t)` and the cumulative Wasserstein bound
//!
//! ```text
//! W_q(π_k^θ, π_k^ϑ) ≤ exp(-Σ_{j=1..k} ∫₀^Δ λ(j,t) dt) ‖θ - ϑ‖
//! λ(j,t)  = λ_sig + σ² λ_h(t)
//! λ_h(t)  = λ_g(j) λ_β^min(Δ-t) / (1 + λ_g(j) Λ_{Δ-t})
//! ```

use crate::error::{Error, Result};
use crate::quadrature::integrate;
use crate::signal::{spectral, ModelParams, SpectralProfile};

const STEP_TOL: f64 = 1e-10;

/// Rate evaluator for one signal model; caches its spectral profile.
#[derive(Debug, Clone)]
pub struct RateModel {
    params: ModelParams,
    spectral: SpectralProfile,
}

fn check_lambda_g(lambda_g: f64) -> Result<()> {
    if lambda_g.is_finite() && lambda_g >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("lambda_g must be finite and >= 0, got {lambda_g}")))
    }
}

impl RateModel {
    pub fn new(params: &ModelParams) -> Result<Self> {
        Ok(Self {
            params: params.clone(),
            spectral: spectral(params)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lambda_sig(&self) -> f64 {
        self.spectral.lambda_sig
    }

    pub fn spectral(&self) -> &SpectralProfile {
        &self.spectral
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let delta = self.params.delta;
        let slack = 1e-12 * delta;
        if !(t >= -slack && t <= delta + slack) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, {delta}]")));
        }
        Ok(t.clamp(0.0, delta))
    }

    pub fn lambda_h(&self, lambda_g: f64, t: f64) -> Result<f64> {
        check_lambda_g(lambda_g)?;
        let t = self.check_time(t)?;
        if lambda_g == 0.0 {
            return Ok(0.0);
        }
        let remaining = self.params.delta - t;
        let numer = lambda_g * self.spectral.lambda_beta_min(remaining);
        let denom = 1.0 + lambda_g * self.spectral.capital_lambda(remaining);
        Ok(numer / denom)
    }

    pub fn lambda_rate(&self, lambda_g: f64, t: f64) -> Result<f64> {
        let sigma2 = self.params.sigma * self.params.sigma;
        Ok(self.lambda_sig() + sigma2 * self.lambda_h(lambda_g, t)?)
    }

    /// `∫₀^Δ λ(j,t) dt` for a step with parameter `lambda_g`.
    pub fn step_exponent(&self, lambda_g: f64) -> Result<f64> {
        check_lambda_g(lambda_g)?;
        let delta = self.params.delta;
        let base = self.lambda_sig() * delta;
        if lambda_g == 0.0 || self.params.sigma == 0.0 {
            return Ok(base);
        }
        let sigma2 = self.params.sigma * self.params.sigma;
        let extra = integrate(
            |t| self.lambda_h(lambda_g, t).expect("t stays inside [0, delta]"),
            0.0,
            delta,
            STEP_TOL / sigma2.max(1.0),
        );
        Ok(base + sigma2 * extra)
    }

    /// `∫₀^t λ(j,s) ds` tabulated at each of the given (increasing) times.
    pub fn cumulative_exponent_at(&self, lambda_g: f64, times: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        let mut prev = 0.0;
        for &t in times {
            let t = self.check_time(t)?;
            if t < prev {
                return Err(Error::InvalidParameter("times must be increasing".into()));
            }
            if t > prev {
                acc += integrate(
                    |s| self.lambda_rate(lambda_g, s).expect("s stays inside [0, delta]"),
                    prev,
                    t,
                    1e-12,
                );
            }
            out.push(acc);
            prev = t;
        }
        Ok(out)
    }

    pub fn cumulative_bound(&self, lambda_g_seq: &[f64]) -> Result<RateProfile> {
        let mut cache: Vec<(u64, f64)> = Vec::new();
        let mut per_step_exponent = Vec::with_capacity(lambda_g_seq.len());
        for &lg in lambda_g_seq {
            check_lambda_g(lg)?;
            let key = lg.to_bits();
            let value = match cache.iter().find(|(k, _)| *k == key) {
                Some(&(_, v)) => v,
                None => {
                    let v = self.step_exponent(lg)?;
                    cache.push((key, v));
                    v
                }
            };
            per_step_exponent.push(value);
        }
        let mut cumulative_log_bound = Vec::with_capacity(per_step_exponent.len() + 1);
        let mut acc = 0.0;
        cumulative_log_bound.push(0.0);
        for e in &per_step_exponent {
            acc -= e;
            cumulative_log_bound.push(acc);
        }
        Ok(RateProfile {
            model: self.params.clone(),
            lambda_g_seq: lambda_g_seq.to_vec(),
            per_step_exponent,
            cumulative_log_bound,
        })
    }
}

/// Per-step exponents and the running log of the contraction factor.
///
/// `cumulative_log_bound[k]` is the log-factor after `k` steps, so index 0
/// is always 0 and the vector is one longer than `per_step_exponent`.
#[derive(Debug, Clone)]
pub struct RateProfile {
    pub model: ModelParams,
    pub lambda_g_seq: Vec<f64>,
    pub per_step_exponent: Vec<f64>,
    pub cumulative_log_bound: Vec<f64>,
}

impl RateProfile {
    pub fn steps(&self) -> usize {
        self.per_step_exponent.len()
    }

    pub fn bound_factor(&self, k: usize) -> f64 {
        self.cumulative_log_bound[k].exp()
    }

    pub fn bound_factors(&self) -> Vec<f64> {
        self.cumulative_log_bound.iter().map(|x| x.exp()).collect()
    }
}

pub fn lambda_h(model: &ModelParams, lambda_g: f64, t: f64) -> Result<f64> {
    RateModel::new(model)?.lambda_h(lambda_g, t)
}

pub fn lambda_rate(model: &ModelParams, lambda_g: f64, t: f64) -> Result<f64> {
    RateModel::new(model)?.lambda_rate(lambda_g, t)
}

pub fn step_exponent(model: &ModelParams, lambda_g: f64) -> Result<f64> {
    RateModel::new(model)?.step_exponent(lambda_g)
}

pub fn cumulative_bound(model: &ModelParams, lambda_g_seq: &[f64]) -> Result<RateProfile> {
    RateModel::new(model)?.cumulative_bound(lambda_g_seq)
}

/// Per-step exponent for `β = -λI` in closed form:
/// `λΔ + ln(1 + σ² λ_g ∫₀^Δ e^{-2λt} dt)`.
pub fn isotropic_step_exponent(lambda: f64, sigma: f64, delta: f64, lambda_g: f64) -> f64 {
    let decay_integral = if lambda == 0.0 {
        delta
    } else {
        -(-2.0 * lambda * delta).exp_m1() / (2.0 * lambda)
    };
    lambda * delta + (sigma * sigma * lambda_g * decay_integral).ln_1p()
}
