//! Central parameter store for asynchronous training. Workers read whole
//! snapshots and send back gradient sets; every write happens under one
//! mutex, so a snapshot is always internally consistent (no torn reads) and
//! updates from different workers serialize. The update arithmetic is the
//! same `step_values` used by the offline optimizer, with a single shared
//! moment table, so one worker replaying segments applies exactly the
//! synchronous algorithm.

use std::sync::Mutex;

use crate::error::Error;
use crate::nn::{clip_grad_slices, Optimizer, OptimizerKind, ParamSet};
use crate::tensor::Real;
use crate::Result;

pub struct ParamStore<T: Real> {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inner: Mutex<Inner<T>>,
}

struct Inner<T: Real> {
    values: Vec<Vec<T>>,
    opt: Optimizer<T>,
    updates: u64,
}

impl<T: Real> ParamStore<T> {
    pub fn new(
        entries: Vec<(String, (usize, usize), Vec<T>)>,
        kind: OptimizerKind,
        lr: f64,
    ) -> Self {
        let mut names = Vec::with_capacity(entries.len());
        let mut shapes = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (name, shape, vals) in entries {
            assert_eq!(shape.0 * shape.1, vals.len(), "store entry {name} shape/value mismatch");
            names.push(name);
            shapes.push(shape);
            values.push(vals);
        }
        ParamStore {
            names,
            shapes,
            inner: Mutex::new(Inner { values, opt: Optimizer::new(kind, lr), updates: 0 }),
        }
    }

    /// Seeds the store from the subset of `params` accepted by `keep`, in
    /// registration order — the order workers use to line up snapshots.
    pub fn from_params(
        params: &ParamSet<T>,
        keep: impl Fn(&str) -> bool,
        kind: OptimizerKind,
        lr: f64,
    ) -> Self {
        let entries = params
            .iter()
            .filter(|(name, _)| keep(name))
            .map(|(name, t)| (name.to_string(), t.shape(), t.value_vec()))
            .collect();
        ParamStore::new(entries, kind, lr)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    /// A consistent copy of every parameter, aligned with `names`.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.inner.lock().unwrap().values.clone()
    }

    /// Number of gradient applications so far.
    pub fn update_count(&self) -> u64 {
        self.inner.lock().unwrap().updates
    }

    /// Applies one worker's gradients: rejects non-finite entries, clips the
    /// joint norm to `clip_norm` (skipped when 0), then runs the shared
    /// optimizer rule per parameter. `grads` aligns with `names`; `None`
    /// slots are untouched. Returns the pre-clip gradient norm.
    pub fn apply(&self, grads: &mut [Option<Vec<T>>], clip_norm: f64) -> Result<f64> {
        if grads.len() != self.names.len() {
            return Err(Error::Usage(format!(
                "gradient set has {} slots, store has {} parameters",
                grads.len(),
                self.names.len()
            )));
        }
        for (idx, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if g.len() != self.shapes[idx].0 * self.shapes[idx].1 {
                    return Err(Error::Usage(format!(
                        "gradient for {} has {} elements, expected {}",
                        self.names[idx],
                        g.len(),
                        self.shapes[idx].0 * self.shapes[idx].1
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGrad { param: self.names[idx].clone() });
                }
            }
        }
        let norm = if clip_norm > 0.0 { clip_grad_slices(grads, clip_norm) } else { 0.0 };
        let mut inner = self.inner.lock().unwrap();
        let inner = &mut *inner;
        for (idx, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                inner.opt.step_values(&self.names[idx], &mut inner.values[idx], g)?;
            }
        }
        inner.updates += 1;
        Ok(norm)
    }

    /// Everything needed to checkpoint: (name, shape, values) in store order.
    pub fn export(&self) -> Vec<(String, (usize, usize), Vec<T>)> {
        let values = self.snapshot();
        self.names
            .iter()
            .cloned()
            .zip(self.shapes.iter().copied())
            .zip(values)
            .map(|((name, shape), vals)| (name, shape, vals))
            .collect()
    }
}
