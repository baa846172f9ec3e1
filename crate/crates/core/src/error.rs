use thiserror::Error;

/// Errors raised by model construction, inference and design search.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent model, prior, design or settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the domain of an operation (negative response, time past the horizon).
    #[error("domain error: {0}")]
    Domain(String),

    /// A non-finite value appeared during evaluation.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// Mode finding did not converge; carries the best iterate found.
    #[error("inference did not converge after {restarts} restart(s); best objective {best_objective}")]
    NotConverged {
        restarts: usize,
        best: Vec<f64>,
        best_objective: f64,
    },

    /// Every Monte Carlo sample failed, or a utility-derived quantity is degenerate.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A covariance or kernel matrix could not be factorized.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
