//! Dense tensors, a reverse-mode differentiation tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{clip_global_norm, AdamState, DEFAULT_LEARNING_RATE};
pub use gradcheck::finite_diff_check;
pub use graph::{bce_loss, sigmoid, Graph, Var, BCE_EPSILON};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("finite difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
