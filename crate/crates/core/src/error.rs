use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    InvalidInput(String),
    /// A configuration filtered everything out or is otherwise unusable.
    Config(String),
    /// A dataset cannot be split (for example a class without examples).
    InvalidDataset(String),
    /// A planted-task description is malformed.
    InvalidSpec(String),
    /// The call budget cannot cover the requested calls.
    BudgetExceeded { limit: u64, used: u64, requested: u64 },
    /// The oracle failed after retries or rejected the request.
    OracleUnavailable(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(m) => write!(f, "invalid input: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::InvalidDataset(m) => write!(f, "invalid dataset: {m}"),
            Error::InvalidSpec(m) => write!(f, "invalid planted spec: {m}"),
            Error::BudgetExceeded { limit, used, requested } => write!(
                f,
                "call budget exceeded: {used} of {limit} used, {requested} more requested"
            ),
            Error::OracleUnavailable(m) => write!(f, "oracle unavailable: {m}"),
        }
    }
}

impl core::error::Error for Error {}
