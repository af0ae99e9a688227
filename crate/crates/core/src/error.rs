use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("sample rate error at row {row}: timestamp step {step} ms (expected 1 ms)")]
    Rate { row: usize, step: i64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unstable plant parameters ({params}): {message}")]
    Instability { params: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("optimizer initialization failed: {0}")]
    OptimizerInit(String),

    #[error("fit failure: {0}")]
    FitFailure(String),

    #[error("stage `{stage}` requires missing artifact {path}")]
    Dependency { stage: String, path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Dependency { .. } => ErrorClass::Config,
            Error::Instability { .. }
            | Error::Numerical(_)
            | Error::Divergence { .. }
            | Error::OptimizerInit(_)
            | Error::FitFailure(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
