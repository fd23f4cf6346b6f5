use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Exit status for validation, configuration and I/O failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status when training produced a non-finite loss.
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] imupose_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: imupose_core::Error,
    },

    #[error("config {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{0}")]
    Config(String),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(imupose_core::Error::Diverged { .. }) => EXIT_DIVERGED,
            _ => EXIT_VALIDATION,
        }
    }
}
