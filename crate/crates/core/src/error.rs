use std::path::PathBuf;

use thiserror::Error;

use crate::taxonomy::ClassId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad error families. The CLI maps each one to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Io,
    Validation,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("corrupt file at byte offset {offset}: {reason}")]
    Corruption { offset: u64, reason: String },

    #[error("point {index}: coordinate {value} on axis {axis} does not fit a 32-bit record with scale {scale} and offset {offset}")]
    CoordinateRange {
        index: usize,
        axis: char,
        value: f64,
        scale: f64,
        offset: f64,
    },

    #[error("alignment error: expected {expected} rows, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("mapping `{source_name}` is incomplete, missing source ids {missing:?}")]
    IncompleteMapping {
        source_name: String,
        missing: Vec<u32>,
    },

    #[error("label {id} at index {index} is outside the declared source universe")]
    LabelDomain { id: u32, index: usize },

    #[error("class {0} cannot be used here")]
    ClassDomain(ClassId),

    #[error("missing column: {0}")]
    MissingColumn(&'static str),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("shape mismatch: expected {expected} features, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("iteration {iteration} produced no pseudo-labels; classes with no surviving points: {vanished:?}")]
    EmptyPseudoLabels {
        iteration: u32,
        vanished: Vec<ClassId>,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::Io { .. } => ErrorFamily::Io,
            Error::Degenerate(_)
            | Error::UndefinedMetric(_)
            | Error::EmptyPseudoLabels { .. }
            | Error::Infeasible(_) => ErrorFamily::Numeric,
            _ => ErrorFamily::Validation,
        }
    }
}
