use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate variance: batch norm needs at least two values per channel, got {count}")]
    DegenerateVariance { count: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("no foreground: no heatmap pixel qualifies for aggregation")]
    NoForeground,

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("format error at {location}: {detail}")]
    Format { location: String, detail: String },

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("euler convention error: {0}")]
    Convention(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("augmentation error: {0}")]
    Augmentation(String),

    #[error("version error: {0}")]
    Version(String),

    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
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

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable machine-greppable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "E_CONFIG",
            Error::Shape { .. } => "E_SHAPE",
            Error::DegenerateVariance { .. } => "E_DEGENERATE",
            Error::Usage(_) => "E_USAGE",
            Error::NoForeground => "E_NO_FOREGROUND",
            Error::Annotation(_) => "E_ANNOTATION",
            Error::Format { .. } => "E_FORMAT",
            Error::DataIntegrity(_) => "E_DATA_INTEGRITY",
            Error::NumericalDomain(_) => "E_NUMERIC",
            Error::Convention(_) => "E_CONVENTION",
            Error::Geometry(_) => "E_GEOMETRY",
            Error::Augmentation(_) => "E_AUGMENT",
            Error::Version(_) => "E_VERSION",
            Error::NonFiniteLoss { .. } => "E_NONFINITE",
            Error::MissingPath(_) => "E_MISSING_PATH",
            Error::Io { .. } => "E_IO",
        }
    }
}
