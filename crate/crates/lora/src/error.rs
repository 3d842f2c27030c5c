use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LoraError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("matrix data has {len} entries, expected {expected}")]
    DataLength { len: usize, expected: usize },
    #[error("matrix entry {index} is not finite")]
    NonFiniteEntry { index: usize },
    #[error("rank {rank} must be positive and below min(d, k) = {limit}")]
    Rank { rank: usize, limit: usize },
    #[error("d_k must be positive")]
    ZeroDk,
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("vocabulary is empty or has duplicate symbols")]
    BadVocab,
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("prompt and input are both empty; there is no context to condition on")]
    EmptyContext,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("epsilon {0} is outside (0, 1e-2]")]
    Epsilon(String),
    #[error("learning rate must be finite and non-negative")]
    LearningRate,
    #[error("adapter file: {0}")]
    Format(String),
}

pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> LoraError {
    LoraError::Shape {
        op,
        detail: detail.into(),
    }
}
