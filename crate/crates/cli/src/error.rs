use infogame::GameError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration problems (schema, CFL, Isaacs gap), 3 for
    /// non-finite values, 1 for I/O failures and failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Game(e) if e.is_numerical() => 3,
            CliError::Game(_) | CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::CheckFailed(_) => 1,
        }
    }
}
