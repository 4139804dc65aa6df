use qkdrate_core::QkdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Engine(QkdError),

    #[error("oracle verification failed: {0}")]
    Oracle(String),
}

impl CliError {
    /// Process exit code: 1 for bad input, 2 for oracle failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Oracle(_) => 2,
            _ => 1,
        }
    }
}

impl From<QkdError> for CliError {
    fn from(e: QkdError) -> Self {
        match e {
            QkdError::Domain { .. } | QkdError::IntensityOrder { .. } | QkdError::InvalidParam(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Engine(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Csv(e.to_string())
    }
}
