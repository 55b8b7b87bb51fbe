use std::io;

use thiserror::Error;

use crate::graph::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("invalid dataset: {}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vertex variant mismatch: {0}")]
    VariantMismatch(String),

    #[error("kernel evaluation failed for pair ({row}, {col}): {message}")]
    KernelPair {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("{0}")]
    Metric(String),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.to_string(),
        }
    }

    /// True for failures caused by the environment rather than the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
