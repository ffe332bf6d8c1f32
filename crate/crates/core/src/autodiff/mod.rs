//! Reverse-mode differentiation over a fixed primitive set.
//!
//! Every continuous gradient in the system flows through [`Tape`]. The
//! primitive basis is deliberately small so each backward rule stays
//! auditable; there is no broadcasting beyond scalar-with-tensor and all
//! other shapes must match exactly.

mod gradcheck;
mod init;
mod store;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, numeric_gradient, relative_error, GradCheckReport, GradEntry};
pub use init::xavier_init;
pub use store::{AdamConfig, ParameterStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tape operations and the optimizer.
#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{primitive}: shape mismatch ({detail})")]
    ShapeMismatch { primitive: &'static str, detail: String },
    #[error("{primitive}: division by zero")]
    DivisionByZero { primitive: &'static str },
    #[error("{primitive}: index {index} out of bounds for {len}")]
    IndexOutOfBounds { primitive: &'static str, index: usize, len: usize },
    #[error("backward: loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),
    #[error("parameter '{0}' already registered")]
    DuplicateParameter(String),
}

pub type Result<T> = std::result::Result<T, DiffError>;
