//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error("round {round}, client {client}: {source}")]
    InRound {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{what}: {source}")]
    Context {
        what: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot unlearn from a single-client run: no reference model exists")]
    SoleClient,

    #[error("epsilon {epsilon} >= eta^2/2 = {limit}: indistinguishability already guaranteed by eta-DP")]
    AlreadyGuaranteed { epsilon: f64, limit: f64 },

    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("csv line {line}: {msg}")]
    CsvLine { line: usize, msg: String },

    #[error("csv: {0}")]
    Csv(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error("run directory: {0}")]
    RunDir(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the round/client context it occurred in.
    pub fn in_round(self, round: usize, client: usize) -> Self {
        Error::InRound {
            round,
            client,
            source: Box::new(self),
        }
    }

    pub fn context(self, what: impl Into<String>) -> Self {
        Error::Context {
            what: what.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
