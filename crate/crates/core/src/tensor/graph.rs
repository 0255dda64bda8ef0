use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use super::ops::Op;
use super::real::Real;
use crate::error::{Error, Result};

thread_local! {
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

/// Run `f` with graph recording suppressed: ops built inside produce plain
/// leaf values with `requires_grad = false`. Nestable.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    NO_GRAD.with(|flag| {
        let prev = flag.replace(true);
        let out = f();
        flag.set(prev);
        out
    })
}

pub(crate) fn grad_suppressed() -> bool {
    NO_GRAD.with(|flag| flag.get())
}

pub(crate) struct Node<T: Real> {
    pub shape: (usize, usize),
    pub values: RefCell<Vec<T>>,
    pub grad: RefCell<Option<Vec<T>>>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Handle to one graph node; rows×cols row-major values. Cloning is cheap
/// (shared node). Scalars are 1×1.
pub struct Tensor<T: Real>(pub(crate) Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("values", &*self.0.values.borrow())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    /// New leaf. `requires_grad` marks it as a trainable parameter target.
    pub fn new(shape: (usize, usize), values: Vec<T>, requires_grad: bool) -> Self {
        assert_eq!(
            shape.0 * shape.1,
            values.len(),
            "tensor data length {} does not match shape {}x{}",
            values.len(),
            shape.0,
            shape.1
        );
        Tensor(Rc::new(Node {
            shape,
            values: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad: requires_grad && !grad_suppressed(),
            op: Op::Leaf,
        }))
    }

    pub fn zeros(shape: (usize, usize), requires_grad: bool) -> Self {
        Tensor::new(shape, vec![T::ZERO; shape.0 * shape.1], requires_grad)
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new((1, 1), vec![v], false)
    }

    pub fn row(values: Vec<T>) -> Self {
        Tensor::new((1, values.len()), values, false)
    }

    pub(crate) fn from_op(shape: (usize, usize), values: Vec<T>, op: Op<T>) -> Self {
        debug_assert_eq!(shape.0 * shape.1, values.len());
        if grad_suppressed() {
            return Tensor::new(shape, values, false);
        }
        let requires_grad = op.inputs().iter().any(|t| t.0.requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor(Rc::new(Node {
            shape,
            values: RefCell::new(values),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.shape.0 * self.0.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn values(&self) -> Ref<'_, Vec<T>> {
        self.0.values.borrow()
    }

    pub fn value_vec(&self) -> Vec<T> {
        self.0.values.borrow().clone()
    }

    /// Overwrite the stored values in place (parameter updates, snapshots).
    pub fn set_values(&self, vals: &[T]) {
        let mut v = self.0.values.borrow_mut();
        assert_eq!(v.len(), vals.len(), "set_values length mismatch");
        v.copy_from_slice(vals);
    }

    pub fn scalar_value(&self) -> T {
        debug_assert_eq!(self.len(), 1, "scalar_value on non-scalar tensor");
        self.0.values.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Detached copy: same values, cut from the graph, no gradient.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::new(self.0.shape, self.0.values.borrow().clone(), false)
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Borrow the gradient buffer mutably, allocating zeros on first touch.
    /// Used by backward rules that write through GEMM.
    pub(crate) fn grad_buf(&self) -> std::cell::RefMut<'_, Vec<T>> {
        {
            let mut slot = self.0.grad.borrow_mut();
            if slot.is_none() {
                *slot = Some(vec![T::ZERO; self.len()]);
            }
        }
        std::cell::RefMut::map(self.0.grad.borrow_mut(), |o| o.as_mut().unwrap())
    }

    /// Reverse-mode sweep from a scalar: accumulates gradients into every
    /// reachable `requires_grad` tensor. Gradients add across calls; callers
    /// zero between optimization steps.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: format!("{}x{}", self.0.shape.0, self.0.shape.1),
                rhs: "1x1 scalar".into(),
            });
        }
        if !self.0.requires_grad {
            return Ok(()); // nothing reachable wants a gradient
        }

        // Post-order DFS (iterative), then walk in reverse.
        let mut topo: Vec<Rc<Node<T>>> = Vec::new();
        let mut seen: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Rc<Node<T>>, usize)> = vec![(Rc::clone(&self.0), 0)];
        seen.insert(Rc::as_ptr(&self.0));
        while let Some((node, idx)) = stack.pop() {
            let inputs = node.op.inputs();
            if idx < inputs.len() {
                stack.push((Rc::clone(&node), idx + 1));
                let child = &inputs[idx].0;
                if child.requires_grad && seen.insert(Rc::as_ptr(child)) {
                    stack.push((Rc::clone(child), 0));
                }
            } else {
                topo.push(node);
            }
        }

        // Interior grads are transients of this pass; only leaves accumulate
        // across calls. Clearing here keeps repeated backward additive.
        for node in &topo {
            if !node.op.inputs().is_empty() {
                *node.grad.borrow_mut() = None;
            }
        }

        self.accumulate_grad(&[T::ONE]);
        for node in topo.iter().rev() {
            let has_grad = node.grad.borrow().is_some();
            if has_grad {
                node.op.backward(node)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dx_of_x_squared_at_3_is_6() {
        let x = Tensor::new((1, 1), vec![3.0f64], true);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_twice_doubles_grads() {
        let x = Tensor::new((1, 2), vec![1.0f64, -2.0], true);
        let y = x.mul(&x).unwrap().sum();
        y.backward().unwrap();
        let g1 = x.grad().unwrap();
        y.backward().unwrap();
        let g2 = x.grad().unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, 2.0 * *a, "accumulation contract: 2x backward = 2x grad");
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::new((1, 2), vec![1.0f64, 2.0], true);
        let y = x.relu();
        assert!(y.backward().is_err());
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::new((1, 2), vec![1.0f64, 2.0], true);
        let y = no_grad(|| x.mul(&x).unwrap().sum());
        assert!(!y.requires_grad());
        assert!(y.backward().is_ok(), "no-op backward on detached scalar");
        assert!(x.grad().is_none());
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let x = Tensor::new((1, 1), vec![2.0f64], true);
        let d = x.mul(&x).unwrap().detach();
        let y = d.mul(&x).unwrap(); // y = detach(x^2) * x; dy/dx should be x^2 = 4, not 3x^2
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn shared_subexpression_accumulates_once_per_path() {
        // y = (x*x) + (x*x) built as two references to the same node: dy/dx = 4x
        let x = Tensor::new((1, 1), vec![5.0f64], true);
        let sq = x.mul(&x).unwrap();
        let y = sq.add(&sq).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![20.0]);
    }

    #[test]
    fn deterministic_forward() {
        let x = Tensor::new((2, 2), vec![0.3f32, -0.7, 0.1, 0.9], true);
        let a = x.tanh().sum().scalar_value();
        let b = x.tanh().sum().scalar_value();
        assert_eq!(a.to_bits(), b.to_bits(), "bit-identical replay within a process");
    }
}
