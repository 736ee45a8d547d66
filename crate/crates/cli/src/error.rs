use std::path::PathBuf;

use thiserror::Error;

/// Failure categories; each maps to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A record file that cannot be read back, or records that must not be
    /// compared with each other.
    #[error("record: {0}")]
    Record(String),
    #[error("run: {0}")]
    Run(#[from] tta_reset::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Record(_) => 5,
            CliError::Run(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
