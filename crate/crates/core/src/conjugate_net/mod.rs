//! Invertible coupling networks and the conjugate-flow model built on them.

pub mod checkpoint;
mod coupling;
mod mlp;
mod ncf;

pub use checkpoint::{Checkpoint, EncodedTensor};
pub use coupling::{twin_augment, CouplingEnsemble, CouplingLayer, EnsembleLayout, Parity};
pub use mlp::{Mlp, MlpLayout};
pub use ncf::{NcfConfig, NcfLayout, NcfModel, NcfOutput};
