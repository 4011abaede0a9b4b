use std::path::PathBuf;

use crate::nli_backend::ScoreKey;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("non-finite or mis-shaped input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported layout version {found} (expected {expected})")]
    LayoutVersion { expected: u32, found: u32 },

    #[error("line {line}: invalid distribution: {message}")]
    Validation { line: usize, message: String },

    #[error("missing NLI score for {0}")]
    MissingScore(ScoreKey),

    #[error("backend failure on example {example_id}")]
    Backend {
        example_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "no threshold reaches precision {floor}; best achievable precision is {max_precision}"
    )]
    InfeasiblePrecision { floor: f64, max_precision: f64 },

    #[error(
        "training split for fold {fold} contains a single class; \
         try a different seed or enable stratified folds"
    )]
    Stratification { fold: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
