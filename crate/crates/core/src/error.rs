use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {0} is not part of this graph")]
    UnknownNode(usize),

    #[error("seed node {0} is not a scalar")]
    SeedNotScalar(usize),

    #[error("no tap named `{0}`")]
    UnknownTap(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("class {class} out of range for a {num_classes}-class model")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("degenerate baseline score {score:.3e} over the region (must be >= 1e-6)")]
    DegenerateBaseline { score: f64 },

    #[error("power iteration did not converge after {iterations} iterations (last change {last_delta:.3e})")]
    NoConvergence { iterations: usize, last_delta: f64 },

    #[error("empty pixel set where a nonempty one is required: {0}")]
    EmptyRegion(&'static str),

    #[error("probabilities at pixel ({row}, {col}) sum to {sum}, not 1")]
    NotADistribution { row: usize, col: usize, sum: f64 },

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format { format, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
