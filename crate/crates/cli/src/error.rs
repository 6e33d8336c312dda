use std::path::PathBuf;

use hydrovalley_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{what} timed out after {seconds} s")]
    Timeout { what: String, seconds: f64 },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for bad input, 3 for budget or timeout, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) => 2,
            CliError::Core(CoreError::BudgetExceeded { .. }) | CliError::Timeout { .. } => 3,
            CliError::Core(
                CoreError::Validation(_) | CoreError::EmptyControlRange { .. } | CoreError::OutOfBox { .. } | CoreError::Shape(_),
            ) => 2,
            CliError::Core(CoreError::ZeroSamples) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
