use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("degenerate box: length={length}, width={width}")]
    DegenerateBox { length: f64, width: f64 },

    #[error("undefined direction: zero-length ({what}) pair")]
    ZeroDirection { what: &'static str },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss={loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
