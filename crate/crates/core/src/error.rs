use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LadaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LadaError {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate input at record {index}: {reason}")]
    Degenerate { index: usize, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at step {step}: {what}")]
    Numerical { step: usize, what: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl LadaError {
    /// Short stable name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            LadaError::Format(_) => "format",
            LadaError::Corruption(_) => "corruption",
            LadaError::EmptyInput(_) => "empty_input",
            LadaError::Degenerate { .. } => "degenerate",
            LadaError::Parameter(_) => "parameter",
            LadaError::Registry(_) => "registry",
            LadaError::Shape { .. } => "shape",
            LadaError::Convergence(_) => "convergence",
            LadaError::Contract(_) => "contract",
            LadaError::Numerical { .. } => "numerical",
            LadaError::Incompatible(_) => "incompatible",
            LadaError::Integrity(_) => "integrity",
            LadaError::State(_) => "state",
            LadaError::UndefinedMetric(_) => "undefined_metric",
            LadaError::Config(_) => "config",
            LadaError::Io { .. } => "io",
            LadaError::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LadaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        LadaError::Json {
            path: path.into(),
            source,
        }
    }
}
