use thiserror::Error;

/// Errors raised across the attack laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset pool is empty")]
    EmptyPool,

    #[error("class {class} of dataset `{dataset}` has no samples")]
    EmptyClass { dataset: String, class: u32 },

    #[error("leaf {leaf} has no samples to draw from")]
    EmptyLeaf { leaf: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training requires at least two classes")]
    SingleClass,

    #[error("model does not expose gradients")]
    NonDifferentiable,

    #[error("normalized entropy needs at least two classes, got {0}")]
    DegenerateClassCount(usize),

    #[error("invalid confidence vector: {0}")]
    InvalidConfidence(String),

    #[error("Sinkhorn did not reach marginal tolerance {tolerance:e} in {iterations} iterations (error {error:e})")]
    SinkhornNonConvergence {
        iterations: usize,
        error: f64,
        tolerance: f64,
    },

    #[error("could not place centroid {placed} with separation {separation} after {attempts} attempts")]
    PackingFailure {
        placed: usize,
        separation: f64,
        attempts: usize,
    },

    #[error("mix spec does not match pool: {0}")]
    SpecMismatch(String),

    #[error("dimension {dim} is not divisible into {blocks} blocks")]
    IndivisibleDim { dim: usize, blocks: usize },

    #[error("malformed file at byte {offset}: {reason}")]
    MalformedFile { offset: u64, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("connection failure: {0}")]
    ConnectionFailure(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("oracle failed at epoch {epoch}, sample {sample}: {source}")]
    OracleFailure {
        epoch: usize,
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
