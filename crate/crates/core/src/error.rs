use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed: {message} (estimate {estimate:e}, abs error {abs_error:e})")]
    Integration {
        message: String,
        estimate: f64,
        abs_error: f64,
    },

    #[error("non-finite value at t={t}, x={x}: {what}")]
    Numeric { t: f64, x: f64, what: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("fixed-point iteration did not converge at node {node} (t={t}) after {iterations} iterations, residual {residual:e}")]
    FixedPoint {
        node: usize,
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("regression needs at least {required} paths, got {available}")]
    InsufficientSamples { required: usize, available: usize },

    #[error("solutions are not on a common grid: {0}")]
    RefinementRequired(String),

    #[error("parse error at column {column}: {message}")]
    Parse { column: usize, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by bad input rather than a numerical failure.
    pub fn is_configuration(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::Parse { .. })
    }
}
