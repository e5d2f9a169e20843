use thiserror::Error;

/// Errors raised by model construction, filtering and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("grid domain too small: boundary mass {leakage:.3e} exceeds {limit:.1e}")]
    DomainTooSmall { leakage: f64, limit: f64 },

    #[error("unsupported likelihood kind `{0}` for this operation")]
    UnsupportedKind(&'static str),

    #[error("all particle weights are degenerate")]
    DegenerateWeights,

    #[error("problem size {size} exceeds limit {limit}")]
    SizeLimit { size: usize, limit: usize },

    #[error("integration diverged at step {step}")]
    Integration { step: usize },

    #[error("initial separation is zero, contraction ratio undefined")]
    UndefinedRatio,

    #[error("density is not normalized")]
    Unnormalized,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
