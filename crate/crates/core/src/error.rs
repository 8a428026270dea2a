use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty graph")]
    EmptyGraph,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("isolated node at index {0}")]
    IsolatedNode(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("lanczos failed to converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("degenerate spectrum")]
    DegenerateSpectrum,

    #[error("eigengap too small: {0:e}")]
    EigengapTooSmall(f64),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("numerical blow-up at layer {0}")]
    NumericalBlowUp(usize),

    #[error("degenerate bias embedding")]
    DegenerateBiasEmbedding,

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at round {round}, epoch {epoch}: {detail}")]
    NonFiniteLoss {
        round: usize,
        epoch: usize,
        detail: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("graph generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("client {client} failed: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for usage/config problems, 2 for
    /// runtime and numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}
