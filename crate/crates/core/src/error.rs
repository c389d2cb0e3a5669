use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("extent {extent} m is not a multiple of resolution {resolution} m")]
    NonTiling { extent: f64, resolution: f64 },
    #[error("a resolution ladder needs at least one level, got {0}")]
    InvalidLevels(usize),
    #[error("level {level} is out of range for a ladder of {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("cell index {index} is out of range for a grid of {cells} cells")]
    InvalidCell { index: usize, cells: usize },
    #[error("point ({x}, {y}) lies outside the workspace")]
    OutOfBounds { x: f64, y: f64 },
    #[error("range references undeclared anchor {0}")]
    UnknownAnchor(u32),
    #[error("measurement frame has no ranges")]
    EmptyFrame,
    #[error("need more than {needed} anchors, frame has {available}")]
    NotEnoughAnchors { needed: usize, available: usize },
    #[error("anchor geometry is degenerate (collinear anchors)")]
    DegenerateGeometry,
    #[error("trellis has no columns")]
    EmptyTrellis,
    #[error("decoding needs at least one frame")]
    LadderMismatch,
    #[error("trajectory has zero length")]
    ZeroLengthPath,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
