use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: channel {channel} out of range ({value})")]
    Invariant {
        line: usize,
        channel: &'static str,
        value: f64,
    },

    #[error("line {line}: timestamp {timestamp} does not follow the previous record")]
    Ordering { line: usize, timestamp: String },

    #[error("{0}")]
    Size(String),

    #[error("record at {timestamp} has year {year}, which matches neither split bucket")]
    Routing { timestamp: String, year: i32 },

    #[error("training diverged at epoch {epoch}{}", batch.map(|b| format!(", batch {b}")).unwrap_or_default())]
    Diverged { epoch: usize, batch: Option<usize> },

    #[error("every grid pair diverged on every fold")]
    Selection,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        left: impl Into<String>,
        right: impl Into<String>,
    ) -> Self {
        Error::Shape {
            op,
            left: left.into(),
            right: right.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used for structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Parse { .. } => "parse",
            Error::Invariant { .. } => "invariant",
            Error::Ordering { .. } => "ordering",
            Error::Size(_) => "size",
            Error::Routing { .. } => "routing",
            Error::Diverged { .. } => "diverged",
            Error::Selection => "selection",
            Error::Config(_) => "config",
            Error::Model(_) => "model",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
