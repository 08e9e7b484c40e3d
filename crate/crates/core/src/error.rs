use std::path::Path;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants line up with the process exit codes of the command-line
/// driver: input problems (1), configuration problems (2) and violated
/// pipeline invariants (3).
#[derive(Debug, Error)]
pub enum Error {
    /// A value failed a constructor invariant. `field` names the offending field.
    #[error("{field} {message}")]
    Invalid { field: String, message: String },

    /// Malformed input at a specific line of a named source.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage could not produce a valid result.
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub fn stage(stage: &'static str, message: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Io { .. } => 1,
            Error::Config(_) => 2,
            Error::Invalid { .. } | Error::Stage { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
