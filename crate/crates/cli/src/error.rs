//! Command-line errors and their exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration keys or values.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] catdiff::Error),

    /// One or more verification checks failed.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// 2 usage, 3 numeric failure, 4 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(catdiff::Error::Numeric { .. } | catdiff::Error::Singular(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Verification(_) => 4,
        }
    }
}
