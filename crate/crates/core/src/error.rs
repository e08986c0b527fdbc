use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("graph still disconnected after {attempts} attempts (n_nodes={n_nodes}, edge_prob={edge_prob})")]
    RetryBudgetExhausted {
        attempts: usize,
        n_nodes: usize,
        edge_prob: f64,
    },

    #[error("graph is not connected: node {0} unreachable")]
    Disconnected(usize),

    #[error("tau {tau} is below lambda_max(L) = {lambda_max}; W would not be positive semidefinite")]
    TauTooSmall { tau: f64, lambda_max: f64 },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sample on line {0} has no nonzero features")]
    ZeroSample(usize),

    #[error("{samples} samples cannot be split across {nodes} nodes")]
    TooFewSamples { samples: usize, nodes: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("singular {0}x{0} system")]
    Singular(usize),

    #[error("observer {observer} is missing delta from node {origin} for round {round}")]
    MissingPacket {
        observer: usize,
        origin: usize,
        round: usize,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
