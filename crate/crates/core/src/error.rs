use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FilmError>;

#[derive(Debug, Error)]
pub enum FilmError {
    #[error("data length {len} does not match {height}x{width}x{channels}")]
    DataLength {
        len: usize,
        height: usize,
        width: usize,
        channels: usize,
    },

    #[error("expected a color image with 1 or 3 channels, got {0}")]
    UnsupportedChannels(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{height}x{width} is not divisible by 2^{depth}")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        depth: usize,
    },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png: {0}")]
    Png(String),

    #[error("cube parse error at line {line}: {msg}")]
    CubeParse { line: usize, msg: String },

    #[error("weight file: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("weight file: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("weight file truncated at byte offset {offset}: {what}")]
    Truncated { offset: usize, what: String },

    #[error("weight file: unsupported dtype tag {tag} for tensor {name:?}")]
    UnsupportedDtype { name: String, tag: u8 },

    #[error("missing weight tensor {0:?}")]
    MissingTensor(String),

    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("architecture header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        trace: Vec<crate::fit::TraceRow>,
    },

    #[error("unknown gradient-check target {0:?}")]
    UnknownTarget(String),
}

impl FilmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FilmError::Io {
            path: path.into(),
            source,
        }
    }
}
