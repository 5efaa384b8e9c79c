use thiserror::Error;

use crate::qp::QpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or scenario field is inconsistent with the rest of the data.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("cannot build constraint set: {0}")]
    Build(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A building subproblem did not reach an optimal solution.
    #[error("building {building}: subproblem ended with status {status:?}")]
    Negotiation { building: usize, status: QpStatus },

    #[error("model inconsistency: {0}")]
    Model(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("decode error: {0}")]
    Decode(String),

    /// A postcondition that holds by construction was violated numerically.
    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
