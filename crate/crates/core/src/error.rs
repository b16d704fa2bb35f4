use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PbmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PbmError {
    #[error("dimension mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("image must have non-zero width and height")]
    EmptyImage,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("filter bank: {0}")]
    FilterBank(String),
    #[error("plane count mismatch: {0} vs {1}")]
    PlaneCountMismatch(usize, usize),
    #[error("patch shape extends outside the {width}x{height} code frame")]
    ShapeOutOfBounds { width: usize, height: usize },
    #[error("patch has no usable pixels")]
    UnusablePatch,

    #[error("detection schema: {0}")]
    Schema(String),
    #[error("degenerate polygon in detection {0}: fewer than 3 vertices")]
    DegeneratePolygon(String),
    #[error("vertex ({x}, {y}) of {id} lies outside the {width}x{height} frame")]
    VertexOutOfBounds {
        id: String,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("duplicate detection id {0}")]
    DuplicateId(String),
    #[error("patch centroid coincides with the iris center")]
    CoincidentCenter,
    #[error("no window of size {0} fits inside the mask")]
    NoCandidateWindow(usize),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("score set: {0}")]
    ScoreSet(String),
    #[error("class too small: {0}")]
    ClassTooSmall(String),

    #[error("render: {0}")]
    Render(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl PbmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PbmError::Io {
            path: path.into(),
            source,
        }
    }
}
