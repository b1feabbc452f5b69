use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor reached a layer with the wrong shape.
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {got:?}")]
    Shape {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("layer {layer} has no spatial output")]
    NotSpatial { layer: usize },

    #[error("model too shallow: {eligible} saliency-eligible layers, at least 3 required")]
    TooShallow { eligible: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
