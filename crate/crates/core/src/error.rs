use epiwatch_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dangling reference: {0}")]
    Reference(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient coverage: {0}")]
    Coverage(String),
    #[error("training diverged at epoch {epoch} (learning rate {lr:e}): {detail}")]
    Divergence { epoch: usize, lr: f64, detail: String },
    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),
    #[error("checkpoint integrity: {0}")]
    Integrity(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("stale attention record: {0}")]
    Consistency(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map_or(0, |p| p.line() as usize);
        Error::Parse {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
