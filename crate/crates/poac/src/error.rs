use thiserror::Error;

/// Unified error type for the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must agree in length or shape do not.
    #[error("shape mismatch: {context}: expected {expected}, got {got}")]
    ShapeError {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A partition is structurally unusable (empty, or ids out of range).
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    /// A validity index is undefined for this partition (e.g. k < 2).
    #[error("undefined validity index: {0}")]
    UndefinedCvi(String),

    /// Input matrix contains NaN or infinite entries.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Requested cluster count cannot be satisfied by the data.
    #[error("infeasible cluster count: k={k} for n={n}")]
    InfeasibleK { k: usize, n: usize },

    /// An iterative solver failed to converge.
    #[error("solver failed: {0}")]
    SolverError(String),

    /// A pipeline violates the chain structure (preprocessors then one clusterer).
    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    /// A pipeline step failed; wraps the underlying error with its position.
    #[error("pipeline step {step} ({kind}) failed: {source}")]
    PipelineStep {
        step: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    /// A dataset specification field is outside its allowed range.
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    /// A dataset spec cannot be realized (e.g. more clusters than points allow).
    #[error("unrealizable dataset spec: {0}")]
    SpecError(String),

    /// Configuration error (empty range, bad fold count, unsupported alpha, ...).
    #[error("config error: {0}")]
    ConfigError(String),

    /// Meta-feature extraction needs more instances.
    #[error("too few instances: need at least {min}, got {got}")]
    TooFewInstances { min: usize, got: usize },

    /// Label corruption requires a non-degenerate truth partition.
    #[error("degenerate truth partition: k={0}, need k >= 2")]
    DegenerateTruth(usize),

    /// Operation requires ground-truth labels the dataset does not carry.
    #[error("dataset {0} has no ground-truth labels")]
    MissingLabels(String),

    /// Statistical test input contains NaN.
    #[error("missing data: {0}")]
    MissingData(String),

    /// Result table is empty where content is required.
    #[error("empty result table")]
    EmptyTable,

    /// Model training cannot proceed.
    #[error("fit error: {0}")]
    FitError(String),

    /// A serialized artifact does not match the expected schema.
    #[error("format error: {0}")]
    FormatError(String),

    /// An internal invariant was violated by the caller (e.g. saving an empty model).
    #[error("invariant violated: {0}")]
    InvariantError(String),

    /// Text data failed to parse; row/column are 1-based with the header as row 1.
    #[error("parse error at row {row}, column {column}: {message}")]
    ParseError {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    IoError(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
