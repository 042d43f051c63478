//! Dense 2-D tensors with tape-based reverse-mode differentiation, Adam and a
//! cosine learning-rate schedule.

mod checkpoint;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_VERSION};
pub use optim::{cosine_lr, Adam, AdamConfig, CosineSchedule, ParamId, ParamStore};
pub use tape::{Axis, Gradients, Tape, Var, PAD};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("shape {shape:?} needs {} values, got {len}", .shape.0 * .shape.1)]
    DataLength { shape: (usize, usize), len: usize },
    #[error("gather index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("tape already consumed by backward")]
    TapeConsumed,
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("NaN gradient for parameter {0}")]
    NanGradient(String),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("optimizer tracks {expected} parameters, store has {found}")]
    OptimizerMismatch { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
