use thiserror::Error;

/// Errors produced by the estimators, generators and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {0} has no training samples")]
    MissingClass(usize),

    #[error("operator is singular (singular values: {spectrum:?})")]
    SingularOperator { spectrum: Vec<f64> },

    #[error("linear system is ill-conditioned even after jitter {jitter:e}")]
    IllConditioned { jitter: f64 },

    #[error(
        "solver did not converge after {iterations} iterations (last objective change {gap:e})"
    )]
    NotConverged { iterations: usize, gap: f64 },

    #[error("all sample weights are zero")]
    ZeroWeights,

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
