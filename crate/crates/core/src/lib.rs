//! Training and transfer laboratory for a decoupled dynamics/reward agent:
//! a reverse-mode autodiff micro-engine, desk-scale environments, an
//! encoder/decoder/forward/inverse dynamics model, an asynchronous recurrent
//! actor-critic over the latent space, exhaustive latent-space planning, and
//! the experiment orchestration (configs, checkpoints, metrics, plots) that
//! ties them together.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod exp;
pub mod nn;
pub mod planner;
pub mod reward;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, Real, Tensor};
