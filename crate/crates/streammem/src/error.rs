use std::io;

use thiserror::Error;

use crate::format::FormatError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] streammem_core::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grid of {points} runs exceeds the cap of {cap}")]
    GridTooLarge { points: usize, cap: usize },
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for I/O and
    /// malformed input, 4 for failed acceptance checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(_) | Error::InvalidSpec(_) | Error::Config(_) | Error::GridTooLarge { .. } => 2,
            Error::Format(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 3,
            Error::Acceptance(_) => 4,
        }
    }
}
