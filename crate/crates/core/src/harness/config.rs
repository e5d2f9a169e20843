use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Covariates, LikelihoodModel};
use crate::linalg::sym_extreme_eigenvalues;
use crate::signal::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    KalmanContraction,
    PfLogisticContraction,
    TensorInvariance,
    Tightness,
    CouplingPathwise,
    SmoothingTheorem2,
    RateTable,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Self::KalmanContraction,
        Self::PfLogisticContraction,
        Self::TensorInvariance,
        Self::Tightness,
        Self::CouplingPathwise,
        Self::SmoothingTheorem2,
        Self::RateTable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::KalmanContraction => "kalman_contraction",
            Self::PfLogisticContraction => "pf_logistic_contraction",
            Self::TensorInvariance => "tensor_invariance",
            Self::Tightness => "tightness",
            Self::CouplingPathwise => "coupling_pathwise",
            Self::SmoothingTheorem2 => "smoothing_theorem2",
            Self::RateTable => "rate_table",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{name}`")))
    }
}

/// Signal model, either spelled out or drawn from the experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Explicit {
        alpha: Vec<f64>,
        /// Row-major.
        beta: Vec<Vec<f64>>,
        sigma: f64,
        delta: f64,
    },
    /// `α = 0`, `β = -λ I`.
    Isotropic { dim: usize, lambda: f64, sigma: f64, delta: f64 },
    /// Random `β` whose symmetric part has smallest eigenvalue exactly
    /// `-lambda_sig`; negative `lambda_sig` gives a mildly unstable model.
    Random {
        dim: usize,
        lambda_sig: f64,
        sigma: f64,
        delta: f64,
        #[serde(default = "default_alpha_scale")]
        alpha_scale: f64,
    },
}

fn default_alpha_scale() -> f64 {
    0.5
}

impl ModelSpec {
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<ModelParams> {
        match self {
            Self::Explicit { alpha, beta, sigma, delta } => {
                let p = alpha.len();
                if beta.len() != p || beta.iter().any(|r| r.len() != p) {
                    return Err(Error::Config(format!("beta must be {p}x{p}")));
                }
                let b = DMatrix::from_fn(p, p, |i, j| beta[i][j]);
                ModelParams::new(DVector::from_vec(alpha.clone()), b, *sigma, *delta)
            }
            Self::Isotropic { dim, lambda, sigma, delta } => ModelParams::isotropic(*dim, *lambda, *sigma, *delta),
            Self::Random { dim, lambda_sig, sigma, delta, alpha_scale } => {
                let p = *dim;
                if p == 0 {
                    return Err(Error::Config("model dimension must be positive".into()));
                }
                let scale = 1.0 / (p as f64).sqrt();
                let g = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
                let sym = (&g + g.transpose()) * 0.5;
                let skew = (&g - g.transpose()) * 0.5;
                let (_, top) = sym_extreme_eigenvalues(&sym);
                let beta = skew + sym - DMatrix::identity(p, p) * (top + lambda_sig);
                let alpha = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal) * alpha_scale);
                ModelParams::new(alpha, beta, *sigma, *delta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LikelihoodSpec {
    /// `y = Hθ + N(0, noise_var I)`. `H` is the identity unless given, or
    /// drawn with `obs_dim` rows of `N(0, 1)` entries.
    Gaussian {
        #[serde(default)]
        h: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        obs_dim: Option<usize>,
        #[serde(default = "one")]
        noise_var: f64,
    },
    /// Bernoulli responses with fresh `N(0, scale²)` covariates each step.
    Logistic {
        #[serde(default = "three")]
        covariates: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Poisson {
        #[serde(default = "three")]
        covariates: usize,
        #[serde(default = "one")]
        scale: f64,
    },
    Constant,
}

fn one() -> f64 {
    1.0
}

fn three() -> usize {
    3
}

impl LikelihoodSpec {
    /// Build for state dimension `p` with covariates for steps `0..n_steps`.
    pub fn build(&self, p: usize, n_steps: usize, rng: &mut ChaCha8Rng) -> Result<LikelihoodModel> {
        let mut normal_matrix = |rows: usize, scale: f64| -> DMatrix<f64> {
            DMatrix::from_fn(rows, p, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
        };
        match self {
            Self::Gaussian { h, obs_dim, noise_var } => {
                let hm = match (h, obs_dim) {
                    (Some(rows), _) => {
                        if rows.is_empty() || rows.iter().any(|r| r.len() != p) {
                            return Err(Error::Config(format!("h must have {p} columns")));
                        }
                        DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j])
                    }
                    (None, Some(m)) => normal_matrix(*m, 1.0),
                    (None, None) => DMatrix::identity(p, p),
                };
                let m = hm.nrows();
                LikelihoodModel::gaussian(hm, DMatrix::identity(m, m) * *noise_var)
            }
            Self::Logistic { covariates, scale } => {
                let xs = (0..n_steps).map(|_| normal_matrix(*covariates, *scale)).collect();
                Ok(LikelihoodModel::LogisticGlm(Covariates::PerStep(xs)))
            }
            Self::Poisson { covariates, scale } => {
                let xs = (0..n_steps).map(|_| normal_matrix(*covariates, *scale)).collect();
                Ok(LikelihoodModel::PoissonGlm(Covariates::PerStep(xs)))
            }
            Self::Constant => Ok(LikelihoodModel::Constant),
        }
    }
}

/// Scenario-specific knobs. Every field has a default so configs only name
/// what they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioOptions {
    /// Initial points; default `±𝟙/√p`.
    pub theta: Option<Vec<f64>>,
    pub vartheta: Option<Vec<f64>>,
    /// Signal value used to simulate observations; default zero.
    pub true_init: Option<Vec<f64>>,
    /// Pass tolerance; its meaning and default depend on the scenario
    /// (see [`ExperimentConfig::tolerance`]).
    pub tol: Option<f64>,
    /// First step at which the particle criterion is checked.
    pub check_from: usize,
    /// Random projections for the sliced lower bound in dimension ≥ 2.
    pub projections: usize,
    /// Euler step as a fraction of `Δ`.
    pub dt_fraction: f64,
    /// Pathwise slack is `1 + coupling_c · dt`.
    pub coupling_c: f64,
    pub grid_nodes: usize,
    pub grid_half_width: f64,
    pub smoothing_horizon: usize,
    pub mu_mean: f64,
    pub nu_mean: f64,
    pub init_var: f64,
    /// Bound on the horizon-truncation diagnostic.
    pub truncation_tol: f64,
    pub lambdas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            theta: None,
            vartheta: None,
            true_init: None,
            tol: None,
            check_from: 5,
            projections: 64,
            dt_fraction: 1e-3,
            coupling_c: 10.0,
            grid_nodes: 512,
            grid_half_width: 12.0,
            smoothing_horizon: 20,
            mu_mean: -2.0,
            nu_mean: 2.0,
            init_var: 4.0,
            truncation_tol: 1e-3,
            lambdas: vec![-1.0, 0.0, 0.5, 2.0],
            sigmas: vec![0.5, 1.0, 2.0],
        }
    }
}

/// One experiment, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub model: ModelSpec,
    pub likelihood: LikelihoodSpec,
    /// Last filtering step.
    pub k: usize,
    #[serde(default = "one_usize")]
    pub replicates: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory receiving `<scenario>.csv` and `<scenario>.json`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "one")]
    pub q: f64,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub options: ScenarioOptions,
}

fn one_usize() -> usize {
    1
}

fn default_particles() -> usize {
    1 << 14
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 && self.scenario != Scenario::RateTable {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("q must be a finite number >= 1, got {}", self.q)));
        }
        if self.particles == 0 {
            return Err(Error::Config("particles must be positive".into()));
        }
        if let Some(t) = self.options.tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("tol must be finite and >= 0, got {t}")));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    /// Tolerance in force: absolute slack on `distance ≤ bound` for
    /// `kalman_contraction` and `tensor_invariance` (1e-10), `|ratio - 1|` for
    /// `tightness` (1e-10), relative slack `ratio ≤ 1 + tol` for
    /// `pf_logistic_contraction` (0.1) and `smoothing_theorem2` (1e-3), and
    /// absolute error on step exponents for `rate_table` (1e-8). The
    /// coupling scenario uses `coupling_c` instead.
    pub fn tolerance(&self) -> f64 {
        self.options.tol.unwrap_or(match self.scenario {
            Scenario::KalmanContraction | Scenario::TensorInvariance | Scenario::Tightness => 1e-10,
            Scenario::PfLogisticContraction => 0.1,
            Scenario::SmoothingTheorem2 => 1e-3,
            Scenario::RateTable => 1e-8,
            Scenario::CouplingPathwise => 0.0,
        })
    }

    /// Settings used when a CLI subcommand runs without `--config`.
    pub fn default_for(scenario: Scenario) -> Self {
        let gaussian = LikelihoodSpec::Gaussian { h: None, obs_dim: None, noise_var: 1.0 };
        let logistic = LikelihoodSpec::Logistic { covariates: 3, scale: 1.0 };
        let (model, likelihood, k, replicates) = match scenario {
            Scenario::KalmanContraction => (
                ModelSpec::Random { dim: 5, lambda_sig: 0.3, sigma: 1.0, delta: 0.2, alpha_scale: 0.5 },
                LikelihoodSpec::Gaussian { h: None, obs_dim: Some(3), noise_var: 0.5 },
                50,
                4,
            ),
            Scenario::PfLogisticContraction => (
                ModelSpec::Isotropic { dim: 1, lambda: 0.5, sigma: 1.0, delta: 0.1 },
                logistic.clone(),
                30,
                32,
            ),
            Scenario::TensorInvariance => (
                ModelSpec::Random { dim: 3, lambda_sig: 0.3, sigma: 1.0, delta: 0.2, alpha_scale: 0.5 },
                gaussian.clone(),
                30,
                1,
            ),
            Scenario::Tightness => (
                ModelSpec::Isotropic { dim: 3, lambda: 0.5, sigma: 0.0, delta: 1.0 },
                gaussian.clone(),
                10,
                1,
            ),
            Scenario::CouplingPathwise => (
                ModelSpec::Isotropic { dim: 1, lambda: 0.5, sigma: 1.0, delta: 1.0 },
                gaussian.clone(),
                3,
                100,
            ),
            Scenario::SmoothingTheorem2 => (
                ModelSpec::Isotropic { dim: 1, lambda: 0.5, sigma: 1.0, delta: 1.0 },
                logistic,
                15,
                1,
            ),
            Scenario::RateTable => (ModelSpec::Isotropic { dim: 1, lambda: 0.5, sigma: 1.0, delta: 1.0 }, gaussian, 10, 1),
        };
        Self {
            scenario,
            model,
            likelihood,
            k,
            replicates,
            particles: default_particles(),
            seed: 0,
            out: None,
            q: 1.0,
            threads: None,
            options: ScenarioOptions::default(),
        }
    }
}
