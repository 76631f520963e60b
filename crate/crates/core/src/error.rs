use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::image::Domain;

/// Coarse error category, used for CLI exit codes and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Io,
    Validation,
    Numeric,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Io => 3,
            Category::Validation => 4,
            Category::Numeric => 5,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::Config => "config",
            Category::Io => "io",
            Category::Validation => "validation",
            Category::Numeric => "numeric",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary or text file. `offset` is the byte offset where parsing failed.
    #[error("malformed {format} in {context} at byte {offset}: {message}")]
    Format {
        format: &'static str,
        context: String,
        offset: u64,
        message: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("domain mismatch: expected {expected:?} samples, found {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },

    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Io { .. } | Error::Format { .. } => Category::Io,
            Error::Validation(_) | Error::DomainMismatch { .. } => Category::Validation,
            Error::Numeric(_) => Category::Numeric,
        }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            context: "<stream>".to_string(),
            offset,
            message: message.into(),
        }
    }

    /// Attach a file name to a format error produced by an in-memory decoder.
    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            Error::Format {
                format,
                offset,
                message,
                ..
            } => Error::Format {
                format,
                context: path.display().to_string(),
                offset,
                message,
            },
            Error::Io { source, .. } => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        // NaN comparisons are false, so they fail the check
        let ok: bool = $cond;
        if !ok {
            return Err($crate::error::Error::Validation(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
