use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("target {target} is not above the critical threshold {critical}")]
    NotAboveCritical { target: f64, critical: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("Picard iteration did not converge at step {step} (max update {residual:.3e})")]
    PicardDivergence { step: usize, residual: f64 },
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("precondition not certified: {0}")]
    Precondition(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
