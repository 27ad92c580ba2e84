use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] fbsde_core::Error),

    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    /// Some cells failed; their rows carry the message.
    #[error("{failed} of {cells} cells failed")]
    CellsFailed { failed: usize, cells: usize },
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_configuration() => 2,
            CliError::Core(_) | CliError::CellsFailed { .. } => 3,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}
