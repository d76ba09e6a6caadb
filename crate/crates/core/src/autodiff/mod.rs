//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values live in a [`Tape`]; model code registers parameters with
//! [`Tape::param`], composes recorded operations, and calls
//! [`Tape::backward`] on a scalar loss. A fresh tape is used per training
//! step.

pub mod gradcheck;
mod init;
mod optim;
mod tape;
mod tensor;

pub use init::{seeded_rng, xavier_uniform, SeededRng};
pub use optim::{Adam, AdamConfig};
pub(crate) use tape::x_over_expm1_deriv;
pub use tape::{x_over_expm1, Gradients, Tape, Var};
pub use tensor::Tensor;
