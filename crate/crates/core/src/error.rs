//! Error type shared by the public network, loss and metric operations.

use alloc::string::String;
use core::fmt;

/// Failure of a public operation's input or configuration contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// A tensor dimension violates the operation's contract. The message
    /// names the offending dimension.
    Shape(String),
    /// A configuration value is invalid or inconsistent.
    Config(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
