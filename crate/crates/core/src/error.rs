use thiserror::Error;

/// Errors raised by grid, operator, bound and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two grid-valued arguments live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Configuration failed validation; every offending field is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A required certificate (growth, convexity, ...) could not be produced.
    #[error("no certificate: {0}")]
    Certificate(String),

    /// The measurement cannot support a verdict.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    /// An operator application failed during iteration.
    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
