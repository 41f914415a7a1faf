use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// The variant names double as the `kind` tag of the CLI's single-line error
/// output, so keep them stable.
#[derive(Debug, Error)]
pub enum RtfnError {
    /// Operand shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A caller broke an API precondition (non-scalar loss, missing gradient, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Bad input data. `line` is 1-based when the error comes from a file.
    #[error("data error{}: {message}", fmt_location(.path, .line))]
    Data {
        message: String,
        path: Option<PathBuf>,
        line: Option<usize>,
    },

    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint could not be decoded or does not match the expected model.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_location(path: &Option<PathBuf>, line: &Option<usize>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!(" at {}:{}", p.display(), l),
        (Some(p), None) => format!(" in {}", p.display()),
        (None, Some(l)) => format!(" at line {l}"),
        (None, None) => String::new(),
    }
}

impl RtfnError {
    pub fn data(message: impl Into<String>) -> Self {
        RtfnError::Data {
            message: message.into(),
            path: None,
            line: None,
        }
    }

    pub fn data_at(message: impl Into<String>, path: impl Into<PathBuf>, line: usize) -> Self {
        RtfnError::Data {
            message: message.into(),
            path: Some(path.into()),
            line: Some(line),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RtfnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            RtfnError::Dimension(_) => "dimension",
            RtfnError::Contract(_) => "contract",
            RtfnError::Data { .. } => "data",
            RtfnError::Config(_) => "config",
            RtfnError::Checkpoint(_) => "checkpoint",
            RtfnError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, RtfnError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(RtfnError::Dimension(msg.into()))
}
