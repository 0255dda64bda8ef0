//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Dynamic graph: every op allocates a node holding its value and a record of
//! its inputs; `backward()` on a scalar walks the graph in reverse topological
//! order and *accumulates* gradients into every reachable `requires_grad`
//! tensor (callers zero between steps). `no_grad` suppresses graph recording
//! for inference-only passes.

mod check;
mod graph;
mod ops;
mod real;

pub use check::{
    grad_check, grad_check_vs, numeric_grad, op_cases, sample_params, sweep_op_gradients, OpCase,
};
pub use graph::{no_grad, Tensor};
pub use ops::{weighted_sum, Activation};
pub use real::Real;
