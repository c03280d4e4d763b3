use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum XconError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("version mismatch: file has version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload: header declares {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("non-finite value at row {row}, view {view}, column {col}")]
    NonFinite { row: usize, view: usize, col: usize },

    #[error("metadata row count {meta} does not match feature row count {features}")]
    RowCountMismatch { meta: usize, features: usize },

    #[error("empty feature matrix")]
    Empty,

    #[error("zero vector at row {row}")]
    ZeroVector { row: usize },

    #[error("malformed metadata at line {line}: {reason}")]
    Metadata { line: usize, reason: String },

    #[error("invalid dataset view: {0}")]
    InvalidView(String),

    #[error("unlabeled row {row} has no ground-truth label")]
    MissingTruth { row: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient distinct points: need {k}, found fewer")]
    InsufficientDistinctPoints { k: usize },

    #[error("k below seen-class count: k={k}, seen classes={seen}")]
    KBelowSeenClasses { k: usize, seen: usize },

    #[error("degenerate partition: K={k}, sub-dataset {subset} has {size} rows")]
    DegeneratePartition { k: usize, subset: usize, size: usize },

    #[error("collapsed embedding at row {row}")]
    CollapsedEmbedding { row: usize },

    #[error("no negatives: batch needs at least 2 rows, got {0}")]
    NoNegatives(usize),

    #[error("no positive pairs in batch")]
    NoPositivePairs,

    #[error("non-finite loss at step {step}: coarse={coarse}, fine={fine}")]
    NonFiniteLoss { step: usize, coarse: f64, fine: f64 },

    #[error("non-finite cost entry at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("empty evaluation set")]
    EmptyEvalSet,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<XconError>,
    },
}

pub type Result<T, E = XconError> = std::result::Result<T, E>;

impl XconError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XconError::Io {
            path: path.into(),
            source,
        }
    }

    /// The pipeline stage this error is attributed to, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            XconError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

/// Attributes errors to a named pipeline stage.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            staged @ XconError::Stage { .. } => staged,
            other => XconError::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
