use thiserror::Error;

/// Errors raised while building or solving a dense CRF problem.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported label compatibility: {0}")]
    UnsupportedCompat(String),
    #[error("cached product drifted from a fresh evaluation (relative error {0:.3e})")]
    CacheMismatch(f64),
}

pub type Result<T, E = CrfError> = std::result::Result<T, E>;
