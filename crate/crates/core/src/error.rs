use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("predicate conflict: feature {feature} is already constrained")]
    Conflict { feature: usize },

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate rule: coverage is zero")]
    DegenerateRule,

    #[error("oracle unavailable: {0}")]
    OracleUnavailable(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("embedding error: {0}")]
    Embedding(String),

    #[error("memory store error: {0}")]
    Store(String),

    #[error("incompatible memory: {0}")]
    IncompatibleMemory(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
