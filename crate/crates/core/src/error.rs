use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("impossible outcome: posterior mass {mass:e} below threshold")]
    ImpossibleOutcome { mass: f64 },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("corrupted state: {0}")]
    CorruptedState(String),

    #[error("insufficient curve coverage: {0}")]
    Coverage(String),

    #[error("fit failed: {0}")]
    FitFailure(String),

    /// `line` is 0 for overrides and whole-file problems.
    #[error("config error{}: {msg}", if *line > 0 { format!(" at line {line}") } else { String::new() })]
    Config { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
