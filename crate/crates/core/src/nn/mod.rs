//! Layers, initialization, parameter bookkeeping, and optimizers on top of
//! the tensor engine.

mod layers;
mod lstm;
mod optim;
mod params;

pub use layers::{EmbedLinear, Linear};
pub use lstm::LstmCellParams;
pub use optim::{clip_global_norm, clip_grad_slices, global_grad_norm, Optimizer, OptimizerKind};
pub use params::ParamSet;

use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use rand::Rng as _;

/// Weight init: uniform in ±1/√fan_in (biases are zeroed by the layer ctors;
/// the LSTM forget-gate bias gets +1). Draws happen in f64 so f32 and f64
/// instantiations share the same underlying sample sequence.
pub fn uniform_init<T: Real>(rng: &mut Rng, shape: (usize, usize), fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let vals: Vec<T> =
        (0..shape.0 * shape.1).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape, vals, true)
}
