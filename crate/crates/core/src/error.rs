use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid image geometry: {0}")]
    InvalidImage(String),

    #[error("{axis} = {len} is not divisible by {factor}")]
    NotDivisible {
        axis: &'static str,
        len: usize,
        factor: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("step {t} out of range {lo}..={hi}")]
    StepOutOfRange { t: usize, lo: usize, hi: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at iteration {iteration} (last finite loss {last_finite_loss:?})")]
    Diverged {
        iteration: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("non-finite sample {value} at index {index}")]
    NonFiniteSample { index: usize, value: f64 },

    #[error("{path}: bad magic bytes, not a model file")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: checksum mismatch (file truncated or corrupted)")]
    Checksum { path: PathBuf },

    #[error("{path}: malformed model: {reason}")]
    MalformedModel { path: PathBuf, reason: String },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
