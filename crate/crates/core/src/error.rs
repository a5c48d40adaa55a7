use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite gradient for parameter `{param}`")]
    Optimization { param: String },

    #[error("schema error: missing column `{column}`")]
    Schema { column: String },

    #[error("data error in battery {battery_id} cycle {cycle_index}: {reason}")]
    Data {
        battery_id: String,
        cycle_index: u32,
        reason: String,
    },

    #[error("cycle of length {len} exceeds pad length {pad_length}")]
    Length { len: usize, pad_length: usize },

    #[error("degenerate channel `{channel}`: max equals min ({value})")]
    DegenerateChannel { channel: String, value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Training { epoch: usize, batch: usize },

    #[error("training failed for held-out battery {battery_id}: {source}")]
    PoolMember {
        battery_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("weight fitting failed: {0}")]
    Fitting(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
