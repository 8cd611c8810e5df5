use thiserror::Error;

/// Errors raised by the solvers and the suite runner.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration field failed validation.
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A matrix function hit a branch cut or a singular point.
    #[error("singular branch: {0}")]
    SingularBranch(String),

    /// A factorization or inversion broke down.
    #[error("solver breakdown: {0}")]
    Breakdown(String),

    /// An iterative estimate did not settle within its budget.
    #[error("no convergence after {iterations} iterations (last relative change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    /// A computed quantity contradicts a proven property; indicates a bug or bad input.
    #[error("internal consistency failure: {0}")]
    Internal(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}
