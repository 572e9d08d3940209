//! Numeric substrate: deterministic RNG, flat parameter vectors, MLP
//! forward/backward, optimizers, finite-difference checking, and bit-exact
//! text checkpoints.

pub mod check;
pub mod checkpoint;
pub mod mlp;
pub mod opt;
pub mod params;
pub mod rng;

pub use check::{grad_check, GradCheckReport};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use mlp::{linear_grad_theta, linear_predict, MlpSpec};
pub use opt::OptState;
pub use params::{ParamVector, Segment};
pub use rng::Rng;
