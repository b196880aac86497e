use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dragpart_core::Error),
    #[error(transparent)]
    Diffusion(#[from] dragpart_diffusion::Error),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("image decode error: {0}")]
    Image(String),
    #[error("dataset check `{oracle}` failed: {detail}")]
    Validation { oracle: String, detail: String },
}

impl Error {
    pub fn file(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::File { path: path.as_ref().display().to_string(), source }
    }

    /// True when the error is a drag-capacity violation.
    pub fn is_capacity(&self) -> bool {
        match self {
            Error::Core(dragpart_core::Error::Capacity { .. }) => true,
            Error::Diffusion(e) => e.is_capacity(),
            _ => false,
        }
    }
}
