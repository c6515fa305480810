use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// A single failed invariant check, optionally located at an `(h, s, a)` row.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Violation {
    pub location: Option<(usize, usize, usize)>,
    pub message: String,
}

impl Violation {
    pub fn at(h: usize, s: usize, a: usize, message: impl Into<String>) -> Self {
        Self {
            location: Some((h, s, a)),
            message: message.into(),
        }
    }

    pub fn global(message: impl Into<String>) -> Self {
        Self {
            location: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((h, s, a)) => write!(f, "(h={h}, s={s}, a={a}): {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{} invariant violation(s), first {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Invariant(Vec<Violation>),

    #[error("parse error in {path} at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("agent deficit: {required} agents required, {available} available (short by {})", required - available)]
    AgentDeficit { required: usize, available: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
