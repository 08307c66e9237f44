use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DgodeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not diagonalizable over the reals: {0}")]
    NotDiagonalizable(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("unknown speaker index {index} (table has {count} speakers)")]
    UnknownSpeaker { index: usize, count: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown label {label:?} at line {line}")]
    UnknownLabel { line: usize, label: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DgodeError {
    fn from(err: std::io::Error) -> Self {
        DgodeError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DgodeError>;
