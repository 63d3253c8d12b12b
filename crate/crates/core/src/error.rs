use thiserror::Error;

pub type Result<T, E = MineError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("integration diverged at step {step}")]
    IntegrationDiverged { step: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("problem size {n} exceeds capacity {max}; subsample the measures first")]
    Capacity { n: usize, max: usize },

    #[error("risk-shift bound violated: slack {slack:e}")]
    BoundViolation { slack: f64 },

    #[error("finite-chain check failed at N = {n}: {detail}")]
    TheoremCheck { n: usize, detail: String },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("map evaluation failed on atom {index}: {reason}")]
    AtomEvaluation { index: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MineError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MineError::Shape(msg.into())
    }
}
