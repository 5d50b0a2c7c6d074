//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the handful of ops the multi-view model needs are provided: matmul,
//! broadcasting row add, softmax, layer norm, ReLU, cross-entropy and a few
//! shape manipulations. Gradients are recorded on a [`Tape`] and consumed by a
//! single [`Tape::backward`] call.

mod error;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with_fault, relative_error, GradCheckReport, Probe};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tape::{concat, mean, GradFault, Tape, Var};
pub use tensor::Tensor;
