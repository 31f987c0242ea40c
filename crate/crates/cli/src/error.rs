use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kdebias::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    /// Subsystem tag printed in front of the message.
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            CliError::Usage(_) => "cli",
            CliError::Output { .. } => "output",
        }
    }

    pub fn output(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Output {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
