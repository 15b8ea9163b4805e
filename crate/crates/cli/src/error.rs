use std::process::ExitCode;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Data(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }
}

impl From<fofl_core::Error> for CliError {
    fn from(e: fofl_core::Error) -> Self {
        use fofl_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Data(_) | E::MissingColumn(_) | E::Csv(_) | E::Empty(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Attaches a path to an I/O failure and classifies it.
pub(crate) fn io_err(kind: fn(String) -> CliError, what: &str, path: &std::path::Path, e: std::io::Error) -> CliError {
    kind(format!("{what} `{}`: {e}", path.display()))
}
