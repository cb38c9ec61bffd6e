use thiserror::Error;

/// Errors raised by the samplers, solvers and scoring routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate noise calibration: {0}")]
    DegenerateCalibration(String),
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("solver did not converge after {iterations} iterations (final gap {gap:e})")]
    Convergence { iterations: usize, gap: f64 },
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),
    #[error("denoiser failure: {0}")]
    Denoiser(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::ParameterDomain(msg.into())
}

pub(crate) fn dims(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
