use thiserror::Error;

/// Unified error type for the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("dataset has no usable samples: {0}")]
    EmptyDataset(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("weights sum to zero")]
    AllZeroWeights,

    #[error("malformed pmf: {0}")]
    MalformedPmf(String),

    #[error("degenerate ball: {0}")]
    DegenerateBall(String),

    #[error("no restart produced a finite objective")]
    NoFiniteGain,

    #[error("value iteration failed to converge (residual {residual})")]
    Nonconvergence { residual: f64 },

    #[error("unknown state: {0}")]
    UnknownState(String),

    #[error("stepped a finished episode")]
    SteppedAfterDone,

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for CLI reporting. 2 = config, 3 = data, 4 = numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DegenerateBall(_) | Error::NoFiniteGain | Error::Nonconvergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
