use thiserror::Error;

/// Errors raised anywhere in the model, data or training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite input to {0}")]
    NumericInput(&'static str),
    #[error("config error: {0}")]
    Config(String),
    #[error("closure is not deterministic: {0}")]
    Determinism(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("load error at line {line}: {msg}")]
    Load { line: usize, msg: String },
    #[error("taxonomy error: {0}")]
    Taxonomy(String),
    #[error("state error: {0}")]
    State(String),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
