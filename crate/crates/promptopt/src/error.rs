use std::fmt;
use std::io;
use std::path::PathBuf;

use promptopt_core::Error as CoreError;

/// Process exit statuses; stable across releases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Io = 1,
    Config = 2,
    Budget = 3,
    Oracle = 4,
    Checkpoint = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: io::Error },
    /// Malformed input file (line numbers are 1-based).
    Parse { path: PathBuf, line: usize, message: String },
    Config(String),
    Checkpoint(String),
    Core(CoreError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn exit_status(&self) -> ExitStatus {
        match self {
            Error::Io { .. } => ExitStatus::Io,
            Error::Parse { .. } | Error::Config(_) => ExitStatus::Config,
            Error::Checkpoint(_) => ExitStatus::Checkpoint,
            Error::Core(e) => match e {
                CoreError::BudgetExceeded { .. } => ExitStatus::Budget,
                CoreError::OracleUnavailable(_) => ExitStatus::Oracle,
                _ => ExitStatus::Config,
            },
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Parse { path, line, message } => write!(f, "{}:{line}: {message}", path.display()),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Checkpoint(m) => write!(f, "checkpoint error: {m}"),
            Error::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Core(e) => Some(e),
            _ => None,
        }
    }
}

impl From<CoreError> for Error {
    fn from(e: CoreError) -> Self {
        Error::Core(e)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
