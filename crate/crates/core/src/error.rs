//! Error type shared across the simulator.

use crate::ClientId;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("coefficients sum to {sum}, expected 1 within 1e-12")]
    CoefficientSum { sum: f64 },

    #[error("coefficient keys do not match weight keys")]
    KeyMismatch,

    #[error("negative coefficient {value} for client {client}")]
    NegativeCoefficient { client: ClientId, value: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty set")]
    EmptySet,

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("label kind does not match model kind: {0}")]
    LabelKind(&'static str),

    #[error("accuracy is undefined for a regression model")]
    NotClassification,

    #[error("closed-form optimum is only available for linear regression")]
    NoClosedFormOptimum,

    #[error("missing parameters for client {0}")]
    MissingWeight(ClientId),

    #[error("missing loss for candidate client {0}")]
    MissingLoss(ClientId),

    #[error("missing gradient for client {0}")]
    MissingGradient(ClientId),

    #[error("duplicate client {0} in pool")]
    DuplicateClient(ClientId),

    #[error("pool of {0} clients exceeds the exhaustive-search limit of {1}")]
    PoolTooLarge(usize, usize),

    #[error("optimal reward {0} is not positive; increase the reward constant C")]
    NonPositiveOptReward(f64),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv row {row}: {msg}")]
    CsvRow { row: usize, msg: String },

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

impl Error {
    pub(crate) fn at_round(self, round: usize) -> Error {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
