use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto one of three process-level categories (see
/// [`Error::category`]) which the command-line driver turns into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("empty scene graph")]
    EmptySceneGraph,

    #[error("missing embedding: {0}")]
    MissingEmbedding(String),

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: &'static str, message: String },

    #[error("zero-norm row {index} in {side} embeddings; cosine distance undefined")]
    ZeroNorm { side: &'static str, index: usize },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown record id: {0}")]
    UnknownRecord(String),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Numerical,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Input => 1,
            ErrorCategory::Config => 2,
            ErrorCategory::Numerical => 3,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } => ErrorCategory::Config,
            Error::Numerical(_) => ErrorCategory::Numerical,
            Error::Record { source, .. } => source.category(),
            _ => ErrorCategory::Input,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn config(field: &'static str, message: impl Into<String>) -> Self {
        Error::Config {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn in_record(self, id: &str) -> Self {
        Error::Record {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
