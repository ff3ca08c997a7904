use thiserror::Error;

/// Errors raised by the data types, models and acquisition machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty dataset: seed the loop with initial observations first")]
    EmptyDataset,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite predictive draw ({value}) at draw {index}")]
    NonFiniteDraw { index: usize, value: f64 },

    #[error("latent sample has no field `{0}`")]
    MissingLatent(String),

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("factorization failed after jitter escalation to {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("unknown task {task} (model has {tasks} tasks)")]
    UnknownTask { task: usize, tasks: usize },

    #[error("unknown model id `{0}`")]
    UnknownModel(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("posterior handle does not fit this model: {0}")]
    HandleMismatch(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
