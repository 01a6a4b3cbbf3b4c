use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {entry}: {message}")]
    Parse { entry: String, message: String },

    #[error("unknown class name(s): {}", names.join(", "))]
    Taxonomy { names: Vec<String> },

    #[error("invalid annotation in image {image_id}: {message}")]
    Annotation { image_id: String, message: String },

    #[error("{0}")]
    Validation(String),

    #[error("missing entries for class(es): {}", classes.join(", "))]
    Completeness { classes: Vec<String> },

    #[error("no such image: {0}")]
    Lookup(String),

    #[error("failed to load predictor {name}: {message}")]
    Load { name: String, message: String },

    #[error("could not decode image: {0}")]
    Decode(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("cannot estimate class {class}: {message}")]
    Estimation { class: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-friendly name of the error class.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Taxonomy { .. } => "taxonomy",
            Error::Annotation { .. } => "annotation",
            Error::Validation(_) => "validation",
            Error::Completeness { .. } => "completeness",
            Error::Lookup(_) => "lookup",
            Error::Load { .. } => "load",
            Error::Decode(_) => "decode",
            Error::Training { .. } => "training",
            Error::Estimation { .. } => "estimation",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }
}
