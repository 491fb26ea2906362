use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid landmarks: {0}")]
    InvalidLandmarks(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("stale or missing forward cache: {0}")]
    StaleCache(String),

    #[error("context overflow: sequence length {len} exceeds cap {cap}")]
    ContextOverflow { len: usize, cap: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("unknown attribute: {0}")]
    UnknownAttribute(String),

    #[error("task {0:?} missing from instruction bank")]
    MissingTask(String),

    #[error("insufficient records for class {class:?} in task {task:?}: need {needed}, have {available}")]
    InsufficientRecords {
        task: String,
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLandmarks(_) => "invalid_landmarks",
            Error::InvalidPartition(_) => "invalid_partition",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidConfig(_) => "invalid_config",
            Error::StaleCache(_) => "stale_cache",
            Error::ContextOverflow { .. } => "context_overflow",
            Error::EmptyInput(_) => "empty_input",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::InvalidRecord(_) => "invalid_record",
            Error::UnknownAttribute(_) => "unknown_attribute",
            Error::MissingTask(_) => "missing_task",
            Error::InsufficientRecords { .. } => "insufficient_records",
            Error::GradientCheck(_) => "gradient_check_failed",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
