use thiserror::Error;

/// Errors surfaced by any stage of the folksonomy pipeline.
#[derive(Debug, Error)]
pub enum FolkError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at {locator}: {reason}")]
    MalformedRecord { locator: String, reason: String },
    #[error("duplicate sapling id `{0}`")]
    DuplicateSapling(String),
    #[error("dangling node id {child} referenced by node {parent} in sapling `{sapling}`")]
    DanglingChild {
        sapling: String,
        parent: u64,
        child: u64,
    },
    #[error("root node {0} missing from node set")]
    MissingRoot(u64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown root name `{0}`")]
    UnknownRoot(String),
    #[error("training set contains a single class")]
    SingleClass,
    #[error("feature length mismatch: expected {expected}, got {got}")]
    FeatureLengthMismatch { expected: usize, got: usize },
    #[error("label oracle failed: {0}")]
    OracleFailure(String),
    #[error("non-finite message {message} at ({i},{j})")]
    NonFiniteMessage { message: String, i: usize, j: usize },
    #[error("empty similarity matrix")]
    EmptyMatrix,
    #[error("single-parent constraint violated during assembly at exemplar {0}")]
    ConstraintViolation(usize),
    #[error("empty learned folksonomy")]
    EmptyFolksonomy,
    #[error("no shared terms between learned and reference taxonomies")]
    NoSharedTerms,
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FolkError>;
