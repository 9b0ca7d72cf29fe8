//! Harness error type with machine-readable categories.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("unknown method '{0}'")]
    UnknownMethod(String),
    #[error(transparent)]
    Core(#[from] complearn_core::Error),
}

impl HarnessError {
    /// Stable category slug printed with CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::UnknownMethod(_) => "method",
            HarnessError::Core(_) => "core",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
