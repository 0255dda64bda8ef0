use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: String, rhs: String },

    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },

    #[error("non-finite gradient in parameter '{param}'")]
    NonFiniteGrad { param: String },

    #[error("non-finite loss: {context}")]
    NonFiniteLoss { context: String },

    #[error("training diverged at epoch {epoch}: {context}")]
    Diverged { epoch: usize, context: String },

    #[error("worker {worker} diverged at step {step}: {context}")]
    WorkerDiverged { worker: usize, step: u64, context: String },

    #[error("environment fault: {0}")]
    EnvFault(String),

    #[error("plan depth {depth} exceeds node cap (4^{max_depth} nodes)")]
    PlanDepthExceeded { depth: usize, max_depth: usize },

    #[error("invalid config field '{field}': {reason}")]
    Config { field: String, reason: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("dataset format error: {0}")]
    Dataset(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
