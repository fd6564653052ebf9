//! Error categories carrying distinct process exit codes.

use std::fmt;

/// Everything the CLI can fail on, grouped so each category maps to its own
/// exit code: configuration 2, data 3, checkpoint 4.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration file, preset name or flag value.
    Config(String),
    /// Missing or malformed dataset files, images, or output locations.
    Data(String),
    /// Unreadable, corrupt or incompatible checkpoint.
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

/// Core-library failures surfacing through a CLI command are configuration
/// problems unless the call site knows better.
impl From<jaffnet_core::Error> for CliError {
    fn from(e: jaffnet_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}
