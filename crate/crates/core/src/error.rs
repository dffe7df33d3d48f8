use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value is unusable for the requested operation.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input or config failed validation. `keys` names the offending fields.
    #[error("validation error [{}]: {message}", keys.join(", "))]
    Validation { keys: Vec<String>, message: String },

    /// A caller broke an API contract (stale cache, missing fine tokens, ...).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("corrupt file {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            keys: vec![key.into()],
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for validation-class failures,
    /// 3 for numeric or training failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_)
            | Error::Config(_)
            | Error::Validation { .. }
            | Error::Contract(_)
            | Error::Format { .. }
            | Error::Corruption { .. }
            | Error::Json(_) => 2,
            Error::Evaluation(_) | Error::Training { .. } => 3,
            Error::Io { .. } => 1,
        }
    }
}
