use std::collections::HashMap;

use super::ParamSet;
use crate::error::Error;
use crate::tensor::Real;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

struct AdamState<T> {
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

/// First-order optimizer over a named parameter set. Keeps per-parameter
/// moment state keyed by name, so the same optimizer can be shared across
/// sequential updates from several workers.
pub struct Optimizer<T: Real> {
    pub kind: OptimizerKind,
    pub lr: f64,
    state: HashMap<String, AdamState<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer { kind, lr, state: HashMap::new() }
    }

    /// Applies one update from the gradients currently stored on `params`.
    /// Parameters without an accumulated gradient are left untouched. Any
    /// non-finite gradient aborts the step with the parameter's name.
    pub fn step(&mut self, params: &ParamSet<T>) -> Result<()> {
        for (name, tensor) in params.iter() {
            let grad = match tensor.grad() {
                Some(g) => g,
                None => continue,
            };
            let mut values = tensor.value_vec();
            self.step_values(name, &mut values, &grad)?;
            tensor.set_values(&values);
        }
        Ok(())
    }

    /// The per-parameter update rule on raw slices. `step` routes through
    /// this, and so does the shared parameter store used by asynchronous
    /// workers, so both paths apply bit-identical arithmetic and share one
    /// moment table.
    pub fn step_values(&mut self, name: &str, values: &mut [T], grad: &[T]) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGrad { param: name.to_string() });
        }
        let lr = T::from_f64(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in values.iter_mut().zip(grad) {
                    *p = *p - lr * *g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let n = grad.len();
                let slot = self.state.entry(name.to_string()).or_insert_with(|| AdamState {
                    t: 0,
                    m: vec![T::ZERO; n],
                    v: vec![T::ZERO; n],
                });
                slot.t += 1;
                let b1 = T::from_f64(beta1);
                let b2 = T::from_f64(beta2);
                let eps = T::from_f64(eps);
                let one = T::ONE;
                let corr1 = T::from_f64(1.0 - beta1.powi(slot.t as i32));
                let corr2 = T::from_f64(1.0 - beta2.powi(slot.t as i32));
                for idx in 0..n {
                    let g = grad[idx];
                    slot.m[idx] = b1 * slot.m[idx] + (one - b1) * g;
                    slot.v[idx] = b2 * slot.v[idx] + (one - b2) * g * g;
                    let m_hat = slot.m[idx] / corr1;
                    let v_hat = slot.v[idx] / corr2;
                    values[idx] = values[idx] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// L2 norm of every gradient currently stored on `params`, accumulated in
/// f64 so the result is independent of the training precision.
pub fn global_grad_norm<T: Real>(params: &ParamSet<T>) -> f64 {
    let mut sum = 0.0f64;
    for (_, tensor) in params.iter() {
        if let Some(grad) = tensor.grad() {
            for g in grad {
                let g = g.to_f64();
                sum += g * g;
            }
        }
    }
    sum.sqrt()
}

/// `clip_global_norm` for detached gradient buffers: rescales every `Some`
/// slice so the joint L2 norm (accumulated in f64, like `global_grad_norm`)
/// is at most `max_norm`. Returns the pre-clip norm; slices at or below the
/// bound stay bit-identical.
pub fn clip_grad_slices<T: Real>(grads: &mut [Option<Vec<T>>], max_norm: f64) -> f64 {
    let mut sum = 0.0f64;
    for grad in grads.iter().flatten() {
        for g in grad {
            let g = g.to_f64();
            sum += g * g;
        }
    }
    let norm = sum.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for grad in grads.iter_mut().flatten() {
            for g in grad.iter_mut() {
                *g = *g * scale;
            }
        }
    }
    norm
}

/// Rescales all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the pre-clip norm. Gradients at or below the bound
/// are left bit-identical.
pub fn clip_global_norm<T: Real>(params: &ParamSet<T>, max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for (_, tensor) in params.iter() {
            if tensor.grad().is_some() {
                let mut buf = tensor.grad_buf();
                for g in buf.iter_mut() {
                    *g = *g * scale;
                }
            }
        }
    }
    norm
}
