//! Neural conjugate flows: surrogate models for autonomous ODEs whose
//! trajectories form an exact one-parameter group, obtained by conjugating a
//! closed-form affine flow with an invertible coupling network.
//!
//! The crate also carries the baselines (Fourier-feature MLP PINN, Neural
//! ODE), benchmark vector fields with a reference integrator, and the
//! experiment harness behind the `conjflow` CLI.

pub mod autodiff;
pub mod conjugate_net;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod matrix_flow;
pub mod training;

pub use error::{Error, Result};
