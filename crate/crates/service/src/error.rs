use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use doseopt_core::CoreError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Wire format of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub field_paths: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{message}")]
    Validation { message: String, field_paths: Vec<String> },

    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("version conflict: expected {expected}, current {current}")]
    VersionConflict { expected: u64, current: u64 },

    #[error("{0}")]
    Excluded(String),

    #[error("missing or invalid bearer token")]
    Unauthorized,

    #[error("{0}")]
    Engine(CoreError),

    #[error("storage failure at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt document {path}: {detail}")]
    Corrupt { path: String, detail: String },

    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError::Validation {
            message: message.into(),
            field_paths: vec![field.into()],
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) | ServiceError::VersionConflict { .. } | ServiceError::Excluded(_) => {
                StatusCode::CONFLICT
            }
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Engine(_) | ServiceError::Io { .. } | ServiceError::Corrupt { .. } | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, field_paths) = match self {
            ServiceError::Validation { field_paths, .. } => ("validation_error", field_paths.clone()),
            ServiceError::NotFound(_) => ("not_found", Vec::new()),
            ServiceError::Conflict(_) => ("conflict", Vec::new()),
            ServiceError::VersionConflict { .. } => ("version_conflict", vec!["expected_version".to_string()]),
            ServiceError::Excluded(_) => ("subgroup_excluded", vec!["covariates".to_string()]),
            ServiceError::Unauthorized => ("unauthorized", Vec::new()),
            ServiceError::Engine(_) => ("engine_failure", Vec::new()),
            ServiceError::Io { .. } | ServiceError::Corrupt { .. } => ("storage_failure", Vec::new()),
            ServiceError::Internal(_) => ("internal", Vec::new()),
        };
        ErrorBody {
            code: code.into(),
            message: self.to_string(),
            field_paths,
        }
    }
}

impl From<CoreError> for ServiceError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidInput { ref field, .. } => ServiceError::Validation {
                field_paths: vec![field.clone()],
                message: e.to_string(),
            },
            CoreError::NotFound(what) => ServiceError::NotFound(format!("{what} does not exist")),
            CoreError::State(msg) => ServiceError::Conflict(msg),
            CoreError::Excluded(msg) => ServiceError::Excluded(msg),
            other => ServiceError::Engine(other),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(self.body())).into_response()
    }
}
