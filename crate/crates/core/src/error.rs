//! Error types shared across the simulator.

use thiserror::Error;

/// Errors produced by tensor math, aggregation, datasets, transport and
/// experiment orchestration.
#[derive(Error, Debug)]
pub enum SplitFedError {
    /// Tensor or parameter-vector shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid samples, masks, or serialized payloads.
    #[error("data error: {0}")]
    Data(String),

    /// A boundary message violated the client/server protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Non-finite values or diverging optimization.
    #[error("numerics error: {0}")]
    Numerics(String),

    /// Bad run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for SplitFedError {
    fn from(e: serde_json::Error) -> Self {
        SplitFedError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SplitFedError>;
