use std::path::PathBuf;

use thiserror::Error;
use uts_numerics::NumericsError;

#[derive(Debug, Error)]
pub enum UtsError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint does not match configuration: {0}")]
    CheckpointMismatch(String),
    #[error("training diverged: non-finite loss in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl UtsError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        UtsError::Io {
            context: context.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            UtsError::Diverged { .. } | UtsError::Numerics(NumericsError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = UtsError> = std::result::Result<T, E>;
