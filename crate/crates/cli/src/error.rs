use thiserror::Error;

/// Failures of a command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] dcmatch::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("gradient check failed: max relative error {max:.3e} is not below {limit:.0e}")]
    GradCheck { max: f64, limit: f64 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use dcmatch::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Input(_)) => EXIT_USAGE,
            CliError::Core(E::Numerical(_) | E::Training(_)) | CliError::GradCheck { .. } => EXIT_NUMERICAL,
            CliError::Core(E::Shape(_) | E::Manifest(_) | E::Payload(_) | E::Io(_)) | CliError::Csv(_) | CliError::Json(_) => {
                EXIT_DATA
            }
        }
    }
}

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}
