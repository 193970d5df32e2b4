use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate face {0:?}: repeated vertex")]
    DegenerateFace(Vec<usize>),

    #[error("face {face:?} references vertex {vertex} but the complex has {n_vertices} vertices")]
    VertexOutOfRange {
        face: Vec<usize>,
        vertex: usize,
        n_vertices: usize,
    },

    #[error("face {0:?} is listed more than once")]
    DuplicateFace(Vec<usize>),

    #[error("face {0:?} is not stored in increasing vertex order")]
    UnsortedFace(Vec<usize>),

    #[error("closure violated: triangle {triangle:?} is missing boundary edge {edge:?}")]
    MissingBoundary { triangle: [usize; 3], edge: [usize; 2] },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("face list line {line}: {message}")]
    FaceList { line: usize, message: String },

    #[error("IDX: bad magic number {0:#010x}")]
    IdxBadMagic(u32),

    #[error("IDX: truncated input (need {needed} bytes, have {available})")]
    IdxTruncated { needed: usize, available: usize },

    #[error("IDX: dimensions overflow addressable size")]
    IdxDimOverflow,

    #[error("IDX: label {value} at index {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("class {class} has {available} samples, {requested} requested")]
    InsufficientClass {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
