//! Wasserstein contraction of filters for linear SDE signals observed through
//! log-concave likelihoods.
//!
//! The crate computes the contraction-rate bound from model parameters and
//! checks it against filtering distributions obtained three ways: exactly
//! (Kalman), by Monte Carlo (bootstrap particle filter) and by 1-D quadrature
//! (grid filter and backward smoothing weights).

pub mod coupling;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kalman;
pub mod likelihood;
pub mod linalg;
pub mod particle;
pub mod quadrature;
pub mod rates;
pub mod signal;
pub mod smoothing;
pub mod transport;

pub use error::{Error, Result};
pub use harness::{run_experiment, ExperimentConfig, ExperimentReport};
pub use likelihood::{LikelihoodModel, Observation};
pub use rates::{RateModel, RateProfile};
pub use signal::{DiscreteTransition, ModelParams, SpectralProfile};
