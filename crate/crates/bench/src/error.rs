use std::path::Path;

/// Failures of a bench command, each tied to a process exit code.
#[derive(thiserror::Error, Debug)]
pub enum BenchError {
    /// Bad flags, bad configuration, unknown names: exit code 2.
    #[error("{0}")]
    Usage(String),

    /// Unreadable or unwritable files: exit code 3.
    #[error("{0}")]
    Io(String),

    /// Data that cannot support the request: exit code 4.
    #[error("{0}")]
    Degenerate(String),
}

pub type BenchResult<T> = Result<T, BenchError>;

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Usage(_) => 2,
            BenchError::Io(_) => 3,
            BenchError::Degenerate(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        BenchError::Usage(msg.into())
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        BenchError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<gandetect::Error> for BenchError {
    fn from(e: gandetect::Error) -> Self {
        match e {
            gandetect::Error::InvalidInput(_) => BenchError::Usage(e.to_string()),
            gandetect::Error::Degenerate(_) => BenchError::Degenerate(e.to_string()),
            gandetect::Error::Format { .. } | gandetect::Error::Io { .. } => BenchError::Io(e.to_string()),
        }
    }
}
