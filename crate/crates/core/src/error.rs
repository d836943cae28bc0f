use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what} at path {path}, step {step}")]
    NonFinite {
        what: &'static str,
        path: usize,
        step: usize,
    },

    #[error("non-finite gradient entry {index}: {value}")]
    NonFiniteGradient { index: usize, value: f64 },

    #[error("training diverged at epoch {epoch}, stage {stage}: loss = {loss}")]
    Diverged { epoch: usize, stage: usize, loss: f64 },

    #[error("allocation of {requested} bytes exceeds the memory budget of {budget} bytes")]
    MemoryBudget { requested: usize, budget: usize },

    #[error("instance too large: {count} candidate rules exceed the cap of {cap}")]
    TooLarge { count: f64, cap: f64 },

    #[error("stale forward cache: {0}")]
    StaleCache(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("insufficient samples: {got} < {required}")]
    InsufficientSamples { got: usize, required: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
