use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no training data")]
    NoTrainingData,
    #[error("class too small to stratify: class {class} has {count} traces")]
    ClassTooSmall { class: usize, count: usize },
    #[error("generator parameters too crowded: class {class} not separable after {retries} retries")]
    TooCrowded { class: usize, retries: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no traces")]
    NoTraces,
    #[error("degenerate step")]
    DegenerateStep,
    #[error("gradient explosion")]
    GradientExplosion,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("attack requires gradients")]
    RequiresGradients,
    #[error("normalization statistics of model and dataset differ")]
    NormStatsMismatch,
    #[error("empty adversarial set")]
    EmptyAdversarialSet,
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
