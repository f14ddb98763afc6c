use std::fmt;

use motinv_core::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flag, key or value.
    Config(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::NonFinite(_) | Error::Diverged { .. } => EXIT_NUMERIC,
                Error::Shape { .. } | Error::NotFrozen | Error::Format(_) | Error::Io { .. } => {
                    EXIT_INPUT
                }
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<motinv_core::FormatError> for CliError {
    fn from(e: motinv_core::FormatError) -> Self {
        CliError::Core(e.into())
    }
}
