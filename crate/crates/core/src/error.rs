use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("label {label} out of range for {n_classes} classes")]
    Label { label: usize, n_classes: usize },

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("forward cache does not match head: {0}")]
    CacheMismatch(String),

    #[error("head kind mismatch: expected {expected}, found {found}")]
    HeadKind { expected: String, found: String },

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parse failures for the on-disk formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("unsupported byte order marker {0}")]
    ByteOrder(u8),
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid record: {0}")]
    Record(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("trailing bytes after payload")]
    Trailing,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class, used by the command line to pick an exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::HeadKind { .. } => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
            _ => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Io,
}
