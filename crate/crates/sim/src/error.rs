use doseopt_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario `{field}`: {reason}")]
    Scenario { field: String, reason: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("simulation stalled: {0}")]
    Stalled(String),
}

impl SimError {
    pub fn scenario(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Scenario {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
