use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{cell}` in column `{column}`")]
    Parse {
        row: usize,
        column: String,
        cell: String,
    },

    #[error("timestamps must be strictly increasing (row {row})")]
    NonMonotonicTimestamps { row: usize },

    #[error("gap in series at row {row}: expected step {expected}, found {found}")]
    Gap { row: usize, expected: i64, found: i64 },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("label vector has length {labels}, values have length {values}")]
    LabelLength { labels: usize, values: usize },

    #[error("normalization range is degenerate (min = max = {0})")]
    DegenerateRange(f64),

    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),

    #[error("split `{name}` has {len} points, need at least {need}")]
    SplitTooSmall {
        name: &'static str,
        len: usize,
        need: usize,
    },

    #[error("series of length {len} is too short for look-back {look_back} + look-ahead {look_ahead}")]
    SeriesTooShort {
        len: usize,
        look_back: usize,
        look_ahead: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("probability {0} outside the open interval (0, 1)")]
    InvalidProbability(f64),

    #[error("need at least {need} excesses to fit a GPD, got {got}")]
    TooFewExcesses { got: usize, need: usize },

    #[error("excess {0} is not strictly positive")]
    NonPositiveExcess(f64),

    #[error("GPD support violated: 1 + gamma * x / sigma <= 0 for x = {0}")]
    SupportViolation(f64),

    #[error("invalid GPD scale {0}")]
    InvalidScale(f64),

    #[error("q = {q} must lie strictly between 0 and N_t/n = {ratio}")]
    QOutOfRange { q: f64, ratio: f64 },

    #[error("x = {x} lies below the initial threshold {threshold}")]
    BelowThreshold { x: f64, threshold: f64 },

    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),

    #[error("calibration needs at least one labeled anomaly and one normal point")]
    NoAnomalies,

    #[error("labels required")]
    LabelsRequired,

    #[error("model has no EVT threshold (not trained with the EVT objective)")]
    MissingThreshold,

    #[error("forward cache does not match the batch (stale cache)")]
    StaleCache,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid inputs or configuration rather than
    /// runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Serialization(_))
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
