use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node {0} is not on this tape")]
    NotOnTape(usize),

    #[error("backward requires a scalar output (got shape {0:?})")]
    NonScalarOutput(Vec<usize>),

    #[error("empty symbol support")]
    EmptySupport,

    #[error("corrupt stream: {0}")]
    CorruptStream(String),

    #[error("checkpoint hash mismatch (bitstream was produced by a different model)")]
    HashMismatch,

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training diverged at step {step}")]
    Diverged { step: usize },

    #[error("trace has no record {index} (len {len})")]
    TraceIndex { index: usize, len: usize },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
