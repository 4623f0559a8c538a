use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("{op}: reduction over an empty/fully-masked set")]
    EmptyReduction { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("sequence overflow: {len} tokens exceed max length {max}")]
    SequenceOverflow { len: usize, max: usize },
    #[error("context shape mismatch: got {got} rows, expected {expected}")]
    ContextMismatch { got: usize, expected: usize },
    #[error("config mismatch on fields: {0:?}")]
    ConfigMismatch(Vec<String>),
    #[error("model has no confidence heads (required by this strategy)")]
    NoConfidenceHeads,
    #[error("rollback to {target} exceeds cache length {len}")]
    RollbackOutOfRange { target: usize, len: usize },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class mismatch: {a} vs {b}")]
    ClassMismatch { a: &'static str, b: &'static str },
    #[error("no traces to aggregate")]
    EmptyTraces,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("generation failed after {attempts} attempts: {reason}")]
    GenerationInfeasible { attempts: usize, reason: String },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: parse error at line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("NaN coordinate")]
    NanCoordinate,
}
