use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Core(#[from] dragpart_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("non-finite loss {loss} at step {step} (examples {examples:?})")]
    NonFinite { step: usize, loss: f64, examples: Vec<u64> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error is a drag-capacity violation.
    pub fn is_capacity(&self) -> bool {
        matches!(self, Error::Core(dragpart_core::Error::Capacity { .. }))
    }
}
