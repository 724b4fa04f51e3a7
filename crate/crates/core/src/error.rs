use thiserror::Error;

#[derive(Debug, Error)]
pub enum LarmError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid joint: {0}")]
    InvalidJoint(String),
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("non-positive depth {depth} at pixel ({u}, {v})")]
    NonPositiveDepth { u: usize, v: usize, depth: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("split '{0}' is empty")]
    EmptySplit(String),
    #[error("write failed for {path}: {source}")]
    DiskWrite { path: String, source: std::io::Error },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("expected exactly two input states with {expected} views each: {detail}")]
    StateCountMismatch { expected: usize, detail: String },
    #[error("empty foreground")]
    EmptyForeground,
    #[error("auxiliary ground truth missing for finetune stage")]
    MissingAuxiliaryGT,
    #[error("too few matches: {found} < {needed}")]
    TooFewMatches { found: usize, needed: usize },
    #[error("joint fit diverged: {0}")]
    Diverged(String),
    #[error("no consensus: best inlier fraction {0:.3}")]
    NoConsensus(f64),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("volume contains no surface")]
    NoSurface,
    #[error("degenerate mesh")]
    DegenerateMesh,
    #[error("empty point set")]
    EmptySet,
    #[error("need at least two frames")]
    TooFewFrames,
    #[error("joint kinds differ")]
    KindMismatch,
    #[error("part {part}: {source}")]
    Part { part: usize, source: Box<LarmError> },
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, LarmError>;
