use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("diagnostic failed: {0}")]
    Diagnostic(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Output(_) => 1,
            CliError::Config(_) => 2,
            CliError::Optimization(_) => 3,
            CliError::Diagnostic(_) => 4,
        })
    }
}

impl From<mlpsel::Error> for CliError {
    fn from(e: mlpsel::Error) -> Self {
        match e {
            mlpsel::Error::OptimizationFailure { .. } | mlpsel::Error::FitFailed { .. } => CliError::Optimization(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
