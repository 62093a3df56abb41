use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{gts} ground-truth instances exceed the {proposals} available proposals")]
    CapacityExceeded { proposals: usize, gts: usize },

    #[error("degenerate heatmap: {0}")]
    DegenerateMap(&'static str),

    /// Returned by metrics that are undefined for the given input (no in-frame
    /// gaze points, no positive labels); callers skip the sample.
    #[error("metric not applicable: {0}")]
    Skip(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("incompatible checkpoint: {0}")]
    Version(String),

    #[error("non-finite loss at step {step} (scenes {scene_ids:?})")]
    NonFiniteLoss { step: usize, scene_ids: Vec<String> },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
