use std::process::ExitCode;

use incomedist_core::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] incomedist_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_SOLVER: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Solver => EXIT_SOLVER,
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Usage | ErrorKind::Io => EXIT_USAGE,
            },
            _ => EXIT_USAGE,
        })
    }
}
