use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("input width {got} does not match network input width {expected}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("non-finite value during integration at step {step}")]
    NonFinite { step: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("state off the unit circle: |x1^2 + x2^2 - 1| = {0:e}")]
    OffCircle(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used by the command-line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::NonScalarLoss(_)
            | Error::BadTensor { .. }
            | Error::WidthMismatch { .. } => "shape",
            Error::NonFinite { .. } | Error::Diverged(_) => "numeric",
            Error::InvalidModel(_) | Error::Config(_) => "config",
            Error::OffCircle(_) => "domain",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }
}
