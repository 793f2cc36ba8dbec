use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: invalid tag {tag:?}")]
    Tag { line: usize, tag: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("requested {requested} sentences but the corpus holds {available}")]
    Capacity { requested: usize, available: usize },

    #[error("target {target:.2}% entity tokens is infeasible; closest achievable is {closest:.2}%")]
    Infeasible { target: f64, closest: f64 },

    #[error("token index {index} out of range for vocabulary of size {vocab_size}")]
    Index { index: usize, vocab_size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("AUC is undefined for single-class input")]
    UndefinedAuc,

    #[error("batch has neither positive nor negative tokens")]
    EmptyBatch,

    #[error("training failed: {0}")]
    Training(String),

    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Toml(String),
}
