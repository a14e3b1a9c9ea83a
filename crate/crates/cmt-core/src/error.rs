//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes surfaced by the library.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    Dimension(String),
    /// An argument value is outside the operation's domain.
    Argument(String),
    /// A model/run configuration is internally inconsistent.
    Config(String),
    /// An API contract was violated (e.g. backward from a non-scalar).
    Contract(String),
    /// On-disk data does not match its manifest; names the offending file.
    Integrity { file: String, detail: String },
    /// Dataset protocol mismatch (e.g. training without ground truth).
    Protocol(String),
    /// Training failure; names the offending parameter.
    Training { parameter: String, detail: String },
    /// A composite value (e.g. wavelet pyramid) has inconsistent structure.
    Structure(String),
    /// Input is degenerate for the requested statistic (e.g. zero band mean).
    DegenerateInput(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Contract(msg) => write!(f, "contract error: {msg}"),
            Error::Integrity { file, detail } => {
                write!(f, "integrity error in {file}: {detail}")
            }
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Training { parameter, detail } => {
                write!(f, "training error at parameter {parameter}: {detail}")
            }
            Error::Structure(msg) => write!(f, "structure error: {msg}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
