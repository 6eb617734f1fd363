use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failure class of a command; each has its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Usage,
    MissingInput,
    CorruptInput,
    IncompatibleShape,
    InvalidArgument,
    OutputExists,
    Numerical,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Usage => 2,
            ErrorCategory::MissingInput => 3,
            ErrorCategory::CorruptInput => 4,
            ErrorCategory::IncompatibleShape => 5,
            ErrorCategory::InvalidArgument => 6,
            ErrorCategory::OutputExists => 7,
            ErrorCategory::Numerical => 8,
            ErrorCategory::Io => 9,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hvts::Error),

    #[error("{} already exists; pass --force to overwrite", path.display())]
    OutputExists { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            CliError::Core(e) => match e {
                hvts::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                    ErrorCategory::MissingInput
                }
                hvts::Error::Io { .. } => ErrorCategory::Io,
                hvts::Error::Corrupt { .. } | hvts::Error::Truncated { .. } | hvts::Error::Json(_) => {
                    ErrorCategory::CorruptInput
                }
                hvts::Error::Shape { .. } => ErrorCategory::IncompatibleShape,
                hvts::Error::InvalidArgument(_) => ErrorCategory::InvalidArgument,
                hvts::Error::Numerical(_) => ErrorCategory::Numerical,
            },
            CliError::OutputExists { .. } => ErrorCategory::OutputExists,
            CliError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorCategory::MissingInput
            }
            CliError::Io { .. } => ErrorCategory::Io,
            CliError::Invalid(_) => ErrorCategory::InvalidArgument,
            CliError::Usage(_) => ErrorCategory::Usage,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category().exit_code()
    }

    /// One-line JSON report for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "category": self.category(), "exit_code": self.exit_code(), "message": self.to_string() }
        })
        .to_string()
    }
}
