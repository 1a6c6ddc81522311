use thiserror::Error;

/// Errors raised by the dose-optimization engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid input `{field}`: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },

    #[error("invalid trial state: {0}")]
    State(String),

    #[error("no posterior draws satisfy the conditioning set {0:?}")]
    Conditioning(Vec<usize>),

    #[error("enrollment rejected: {0}")]
    Excluded(String),

    #[error("not found: {0}")]
    NotFound(String),
}

impl CoreError {
    pub fn input(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn numerical(context: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Numerical {
            context,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
