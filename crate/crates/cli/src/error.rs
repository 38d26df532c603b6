//! Process-level error type mapping failures onto the tool's exit codes:
//! 1 for invalid input (flags, configs, file contents), 2 for I/O failures.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed files, failed validation — exit code 1.
    Invalid(String),
    /// Filesystem/OS failures — exit code 2.
    Io(String),
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> CliError {
        CliError::Invalid(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> CliError {
        CliError::Io(msg.into())
    }

    /// Wrap an OS error with the path it concerns.
    pub fn io_at(path: &Path, err: std::io::Error) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(msg) | CliError::Io(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;
