use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Infeasibility of a synthesis problem is *not* an error: it is reported
/// through the outcome enums in [`crate::synthesis`] so batch evaluation can
/// continue.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A factorization or iterative method failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The Riccati recursion did not converge (pair not stabilizable).
    #[error("system is not stabilizable: {0}")]
    Stabilizability(String),

    /// Malformed SDP expression, rejected while building a problem.
    #[error("invalid SDP expression: {0}")]
    Sdp(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn dimension(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}
