use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// The CLI maps these onto process exit codes: I/O problems exit with 2,
/// everything else (bad inputs, malformed files, unusable configs) with 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a precondition (shape mismatch, bad index, empty class).
    #[error("input error: {0}")]
    Input(String),

    /// Values loaded from disk fall outside their documented range.
    #[error("validation error: {0}")]
    Validation(String),

    /// A binary or text file is malformed at a known position.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    /// A configuration cannot be honoured (e.g. a non-reconstructible STFT window).
    #[error("config error: {0}")]
    Config(String),

    /// A numerical routine produced a non-finite value.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::Wav(hound::Error::IoError(_)) => 2,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 2,
            Error::Json(e) if e.is_io() => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
