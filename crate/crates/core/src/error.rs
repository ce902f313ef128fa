use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("quadrature did not reach tolerance {tol:e} within {panels} panels (last error estimate {estimate:e})")]
    QuadratureNonConvergence {
        tol: f64,
        panels: usize,
        estimate: f64,
    },

    #[error("optimizer stopped after {iterations} iterations with gradient norm {gradient_norm:e}")]
    OptimizerNonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("P is not absolutely continuous with respect to Q at support point {at}")]
    AbsoluteContinuity { at: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is rank deficient (|r_min| / |r_max| = {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("class conditions not met: {0}")]
    ClassCondition(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
