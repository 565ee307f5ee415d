//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },

    #[error("non-finite logit at row {row}, col {col}")]
    NonFiniteLogit { row: usize, col: usize },

    #[error("label {label} out of range [0, {n_classes}) at row {row}")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        n_classes: usize,
    },

    #[error("truncated payload in {path}: {detail}")]
    TruncatedPayload { path: String, detail: String },

    #[error("malformed record at row {row}: {detail}")]
    MalformedRecord { row: usize, detail: String },

    #[error("invalid store: {0}")]
    InvalidStore(String),

    #[error("labels required but absent")]
    MissingLabels,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate regression design: {0}")]
    DegenerateFit(String),

    #[error("zero variance in {0}")]
    ZeroVariance(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid class marginal: {0}")]
    InvalidMarginal(String),

    #[error("eigendecomposition failed to converge after {sweeps} sweeps")]
    EigenNonConvergence { sweeps: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("class {class} empty after imbalance decay")]
    EmptyClass { class: usize },

    #[error("invalid config at {pointer}: {detail}")]
    InvalidConfig { pointer: String, detail: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{context}: {source}")]
    WithDataset {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the dataset id it occurred on.
    pub fn for_dataset(self, dataset_id: &str) -> Self {
        Error::WithDataset {
            context: format!("dataset '{dataset_id}'"),
            source: Box::new(self),
        }
    }
}
