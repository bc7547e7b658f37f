use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant failure: {0}")]
    Invariant(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invariant(_) => ExitCode::from(1),
            CliError::Config(_) | CliError::Output(_) => ExitCode::from(2),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

/// Tags a core error raised while checking inputs.
pub fn config<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

/// Tags a core error raised while running.
pub fn invariant<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Invariant(e.to_string())
}
