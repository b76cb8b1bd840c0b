//! Minimal dense-tensor core with a recorded forward pass and reverse-mode
//! gradients, plus the Adam optimizer and a finite-difference gradient oracle.
//!
//! Everything is `f64`. A [`Tape`] records primitive applications in
//! execution order; [`Tape::backward`] walks it in reverse.

mod gradcheck;
mod ops;
mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{check_gradient, finite_difference_check};
pub use ops::{Primitive, PrimitiveKind};
pub use optim::{optimizer_step, Adam, OptimizerState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unsupported primitive: {0}")]
    UnsupportedOp(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("finite-difference oracle unusable: {0}")]
    OracleUnusable(String),
}
