use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {got})")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: non-positive output {dim} ({value})")]
    NonPositiveOutput {
        op: &'static str,
        dim: &'static str,
        value: i64,
    },

    #[error("tensor data length {got} does not match shape {shape} ({expected} elements)")]
    DataLength { shape: Shape, expected: usize, got: usize },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("{op}: empty spatial extent")]
    EmptySpatial { op: &'static str },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("computation graph already consumed by a backward pass")]
    GraphConsumed,

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("non-binary ground truth value {value} at flat index {index}")]
    NonBinaryTruth { index: usize, value: f32 },

    #[error("metrics over an empty pixel set")]
    EmptyEvaluation,

    #[error("efficiency entry `{name}`: {field} must be positive (got {value})")]
    NonPositiveCost {
        name: String,
        field: &'static str,
        value: f64,
    },

    #[error("no efficiency entries")]
    NoEntries,

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("image size mismatch: {a} is {a_w}x{a_h}, {b} is {b_w}x{b_h}")]
    ImageSizeMismatch {
        a: PathBuf,
        a_w: u32,
        a_h: u32,
        b: PathBuf,
        b_w: u32,
        b_h: u32,
    },

    #[error("{path}: unsupported pixel format {format}; expected 8-bit RGB or grayscale")]
    UnsupportedImage { path: PathBuf, format: String },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("dataset {root}: {message}")]
    Dataset { root: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint does not match model: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error stems from bad input (files, configs, flags) rather
    /// than from a computation that went wrong.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::NonBinaryTruth { .. }
                | Error::NonPositiveCost { .. }
                | Error::NoEntries
                | Error::Parse { .. }
                | Error::ImageSizeMismatch { .. }
                | Error::UnsupportedImage { .. }
                | Error::Image { .. }
                | Error::Dataset { .. }
                | Error::Checkpoint(_)
                | Error::CheckpointVersion { .. }
                | Error::CheckpointMismatch(_)
                | Error::Config(_)
                | Error::Io { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
