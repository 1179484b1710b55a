use std::fmt;

use panda_core::PandaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, config or names.
    Usage,
    /// Unreadable, unwritable or malformed files.
    Io,
    /// The fit or inference failed numerically.
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Usage, message: msg.to_string() }
    }

    pub fn io(msg: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Io, message: msg.to_string() }
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Self { kind: ErrorKind::Numeric, message: msg.to_string() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<PandaError> for CliError {
    fn from(e: PandaError) -> Self {
        match &e {
            PandaError::InvalidParameter(_) => CliError::usage(e),
            PandaError::Tuning(msgs) => CliError::numeric(format!("{e}:\n  {}", msgs.join("\n  "))),
            _ => CliError::numeric(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e)
    }
}
