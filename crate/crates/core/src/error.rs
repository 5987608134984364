use thiserror::Error;

/// Errors raised by the dimensional clustering library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric argument fell outside the domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument was invalid (sizes, orders, shapes).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Every distance in a dataset was zero, or the dataset was empty.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// A model structure tuple violated its invariants.
    #[error("invalid model structure: {0}")]
    Structure(String),

    /// A mixture component lost all responsibility mass and could not be rescued.
    #[error("structure {structure} is infeasible: {reason}")]
    Infeasible { structure: String, reason: String },

    /// Malformed CSV input.
    #[error("parse error at row {row}, column {column}: {reason}")]
    Parse { row: usize, column: usize, reason: String },

    /// Malformed or unsupported image input.
    #[error("image format error: {0}")]
    Format(String),

    /// A result document carried an unknown schema version.
    #[error("unsupported result schema version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("serialization error: {0}")]
    Serde(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
