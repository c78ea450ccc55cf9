use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x1 <= x2 and y1 <= y2")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("box {index} has non-positive {what} {value}")]
    DegenerateBox {
        index: usize,
        what: &'static str,
        value: f64,
    },

    #[error("down-sampling rate {r} gives an empty grid for a {width}x{height} image")]
    EmptyGrid { r: u32, width: u32, height: u32 },

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("embedding dimension must be at least 2, got {0}")]
    EmbeddingTooShort(usize),

    #[error("embedding has non-finite components")]
    NonFiniteEmbedding,

    #[error("degenerate embedding: norm {norm:e} is too small to normalize")]
    DegenerateEmbedding { norm: f64 },

    #[error("detection {index} has no embedding but the {variant} variant needs one")]
    MissingEmbedding { index: usize, variant: &'static str },

    #[error("detection {index} has a non-finite score")]
    NonFiniteScore { index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),

    #[error("evaluation needs at least one non-ignored ground-truth box")]
    NoGroundTruth,
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::ShapeMismatch { what, expected, actual }
    }
}
