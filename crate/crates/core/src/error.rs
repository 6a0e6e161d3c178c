use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated feature file while reading {}", match .scale {
        Some(i) => format!("scale {i}"),
        None => "header".to_string(),
    })]
    Truncated { scale: Option<usize> },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {}: {message}", .path.display())]
    Image { path: PathBuf, message: String },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("fold {fold} failed: {cause}")]
    Fold { fold: usize, cause: Box<Error> },

    #[error("detector: {0}")]
    Detector(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than by a
    /// failure during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::Format(_)
            | Error::Truncated { .. }
            | Error::Image { .. }
            | Error::Manifest { .. }
            | Error::Validation(_)
            | Error::Insufficient(_) => true,
            Error::Io { .. }
            | Error::NonFinite(_)
            | Error::Divergence { .. }
            | Error::Detector(_) => false,
            Error::Fold { cause, .. } => cause.is_validation(),
        }
    }
}
