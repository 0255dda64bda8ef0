use std::rc::Rc;

use super::graph::{Node, Tensor};
use super::real::Real;
use crate::error::{Error, Result};

fn fmt_shape(s: (usize, usize)) -> String {
    format!("{}x{}", s.0, s.1)
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::ShapeMismatch { op, lhs: fmt_shape(lhs), rhs: fmt_shape(rhs) }
}

/// C ← alpha·A·B + beta·C, all row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    sa: (isize, isize),
    b: &[T],
    sb: (isize, isize),
    beta: T,
    c: &mut [T],
    sc: (isize, isize),
) {
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            beta,
            c.as_mut_ptr(),
            sc.0,
            sc.1,
        )
    }
}

/// Backward record: each variant holds the op's input handles plus whatever
/// forward-pass context its gradient rule needs.
pub(crate) enum Op<T: Real> {
    Leaf,
    /// y = x·Wᵀ + b, with W stored [out, in].
    Affine { x: Tensor<T>, w: Tensor<T>, b: Tensor<T> },
    /// y[r] = bias + Σ_{i ∈ idx[r]} table[i]. Equivalent to a linear layer on
    /// a sparse binary input whose active positions are idx[r].
    EmbedSum { table: Tensor<T>, bias: Tensor<T>, idx: Rc<Vec<Vec<u32>>> },
    Concat { a: Tensor<T>, b: Tensor<T> },
    RowSlice { x: Tensor<T>, start: usize },
    Add { a: Tensor<T>, b: Tensor<T> },
    Sub { a: Tensor<T>, b: Tensor<T> },
    Mul { a: Tensor<T>, b: Tensor<T> },
    ScaleShift { x: Tensor<T>, k: T },
    Relu { x: Tensor<T> },
    Elu { x: Tensor<T> },
    Tanh { x: Tensor<T> },
    Sigmoid { x: Tensor<T> },
    Exp { x: Tensor<T> },
    Clamp { x: Tensor<T>, lo: T, hi: T },
    Softmax { x: Tensor<T> },
    LogSoftmax { x: Tensor<T> },
    Sum { x: Tensor<T> },
    Mean { x: Tensor<T> },
    Mse { a: Tensor<T>, b: Tensor<T> },
    /// Mean over rows of −log softmax(logits)[target]; `probs` caches the
    /// row-softmax from the forward pass.
    CrossEntropy { logits: Tensor<T>, targets: Rc<Vec<usize>>, probs: Vec<T> },
    Pick { x: Tensor<T>, index: usize },
    WeightedSum { terms: Vec<(T, Tensor<T>)> },
}

impl<T: Real> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Affine { x, w, b } => vec![x, w, b],
            Op::EmbedSum { table, bias, .. } => vec![table, bias],
            Op::Concat { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Mse { a, b } => {
                vec![a, b]
            }
            Op::RowSlice { x, .. }
            | Op::ScaleShift { x, .. }
            | Op::Relu { x }
            | Op::Elu { x }
            | Op::Tanh { x }
            | Op::Sigmoid { x }
            | Op::Exp { x }
            | Op::Clamp { x, .. }
            | Op::Softmax { x }
            | Op::LogSoftmax { x }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Pick { x, .. } => vec![x],
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::WeightedSum { terms } => terms.iter().map(|(_, t)| t).collect(),
        }
    }

    /// Propagate `out`'s gradient into this op's inputs (accumulating).
    pub(crate) fn backward(&self, out: &Rc<Node<T>>) -> Result<()> {
        let g_ref = out.grad.borrow();
        let g = g_ref.as_ref().expect("backward called without output grad");
        match self {
            Op::Leaf => {}

            Op::Affine { x, w, b } => {
                let (bs, out_dim) = out.shape;
                let in_dim = x.shape().1;
                if x.requires_grad() {
                    let xv_w = x.values(); // only to keep shape asserts honest in debug
                    debug_assert_eq!(xv_w.len(), bs * in_dim);
                    drop(xv_w);
                    let wv = w.values();
                    let mut dx = x.grad_buf();
                    // dx += g · W   [B,out]·[out,in]
                    gemm(
                        bs,
                        out_dim,
                        in_dim,
                        T::ONE,
                        g,
                        (out_dim as isize, 1),
                        &wv,
                        (in_dim as isize, 1),
                        T::ONE,
                        &mut dx,
                        (in_dim as isize, 1),
                    );
                }
                if w.requires_grad() {
                    let xv = x.values();
                    let mut dw = w.grad_buf();
                    // dW += gᵀ · x   [out,B]·[B,in]
                    gemm(
                        out_dim,
                        bs,
                        in_dim,
                        T::ONE,
                        g,
                        (1, out_dim as isize),
                        &xv,
                        (in_dim as isize, 1),
                        T::ONE,
                        &mut dw,
                        (in_dim as isize, 1),
                    );
                }
                if b.requires_grad() {
                    let mut db = b.grad_buf();
                    for r in 0..bs {
                        for o in 0..out_dim {
                            db[o] += g[r * out_dim + o];
                        }
                    }
                }
            }

            Op::EmbedSum { table, bias, idx } => {
                let d = out.shape.1;
                if table.requires_grad() {
                    let mut dt = table.grad_buf();
                    for (r, row_idx) in idx.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        for &i in row_idx {
                            let dst = &mut dt[i as usize * d..(i as usize + 1) * d];
                            for (a, b) in dst.iter_mut().zip(gr) {
                                *a += *b;
                            }
                        }
                    }
                }
                if bias.requires_grad() {
                    let mut db = bias.grad_buf();
                    for r in 0..out.shape.0 {
                        for c in 0..d {
                            db[c] += g[r * d + c];
                        }
                    }
                }
            }

            Op::Concat { a, b } => {
                let rows = out.shape.0;
                let (na, nb) = (a.shape().1, b.shape().1);
                let n = na + nb;
                if a.requires_grad() {
                    let mut da = a.grad_buf();
                    for r in 0..rows {
                        for c in 0..na {
                            da[r * na + c] += g[r * n + c];
                        }
                    }
                }
                if b.requires_grad() {
                    let mut db = b.grad_buf();
                    for r in 0..rows {
                        for c in 0..nb {
                            db[r * nb + c] += g[r * n + na + c];
                        }
                    }
                }
            }

            Op::RowSlice { x, start } => {
                if x.requires_grad() {
                    let cols = out.shape.1;
                    let mut dx = x.grad_buf();
                    let base = start * cols;
                    for (i, gi) in g.iter().enumerate() {
                        dx[base + i] += *gi;
                    }
                }
            }

            Op::Add { a, b } => {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    b.accumulate_grad(g);
                }
            }

            Op::Sub { a, b } => {
                if a.requires_grad() {
                    a.accumulate_grad(g);
                }
                if b.requires_grad() {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    b.accumulate_grad(&neg);
                }
            }

            Op::Mul { a, b } => {
                if a.requires_grad() {
                    let bv = b.values();
                    let da: Vec<T> = g.iter().zip(bv.iter()).map(|(&gi, &bi)| gi * bi).collect();
                    drop(bv);
                    a.accumulate_grad(&da);
                }
                if b.requires_grad() {
                    let av = a.values();
                    let db: Vec<T> = g.iter().zip(av.iter()).map(|(&gi, &ai)| gi * ai).collect();
                    drop(av);
                    b.accumulate_grad(&db);
                }
            }

            Op::ScaleShift { x, k } => {
                if x.requires_grad() {
                    let dx: Vec<T> = g.iter().map(|&gi| gi * *k).collect();
                    x.accumulate_grad(&dx);
                }
            }

            Op::Relu { x } => {
                if x.requires_grad() {
                    let xv = x.values();
                    let dx: Vec<T> = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gi, &xi)| if xi > T::ZERO { gi } else { T::ZERO })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Elu { x } => {
                if x.requires_grad() {
                    let xv = x.values();
                    let yv = out.values.borrow();
                    let dx: Vec<T> = g
                        .iter()
                        .zip(xv.iter().zip(yv.iter()))
                        .map(|(&gi, (&xi, &yi))| if xi > T::ZERO { gi } else { gi * (yi + T::ONE) })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Tanh { x } => {
                if x.requires_grad() {
                    let yv = out.values.borrow();
                    let dx: Vec<T> =
                        g.iter().zip(yv.iter()).map(|(&gi, &yi)| gi * (T::ONE - yi * yi)).collect();
                    drop(yv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Sigmoid { x } => {
                if x.requires_grad() {
                    let yv = out.values.borrow();
                    let dx: Vec<T> =
                        g.iter().zip(yv.iter()).map(|(&gi, &yi)| gi * yi * (T::ONE - yi)).collect();
                    drop(yv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Exp { x } => {
                if x.requires_grad() {
                    let yv = out.values.borrow();
                    let dx: Vec<T> = g.iter().zip(yv.iter()).map(|(&gi, &yi)| gi * yi).collect();
                    drop(yv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Clamp { x, lo, hi } => {
                if x.requires_grad() {
                    let xv = x.values();
                    let dx: Vec<T> = g
                        .iter()
                        .zip(xv.iter())
                        .map(|(&gi, &xi)| if xi >= *lo && xi <= *hi { gi } else { T::ZERO })
                        .collect();
                    drop(xv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Softmax { x } => {
                if x.requires_grad() {
                    let yv = out.values.borrow();
                    let (rows, cols) = out.shape;
                    let mut dx = vec![T::ZERO; rows * cols];
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: T = gr.iter().zip(y).map(|(&gi, &yi)| gi * yi).sum();
                        for c in 0..cols {
                            dx[r * cols + c] = y[c] * (gr[c] - dot);
                        }
                    }
                    drop(yv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::LogSoftmax { x } => {
                if x.requires_grad() {
                    let yv = out.values.borrow();
                    let (rows, cols) = out.shape;
                    let mut dx = vec![T::ZERO; rows * cols];
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gsum: T = gr.iter().copied().sum();
                        for c in 0..cols {
                            dx[r * cols + c] = gr[c] - y[c].exp() * gsum;
                        }
                    }
                    drop(yv);
                    x.accumulate_grad(&dx);
                }
            }

            Op::Sum { x } => {
                if x.requires_grad() {
                    let dx = vec![g[0]; x.len()];
                    x.accumulate_grad(&dx);
                }
            }

            Op::Mean { x } => {
                if x.requires_grad() {
                    let scale = g[0] / T::from_usize(x.len());
                    let dx = vec![scale; x.len()];
                    x.accumulate_grad(&dx);
                }
            }

            Op::Mse { a, b } => {
                let n = T::from_usize(a.len());
                let two = T::from_f64(2.0);
                let scale = g[0] * two / n;
                if a.requires_grad() || b.requires_grad() {
                    let av = a.values();
                    let bv = b.values();
                    let d: Vec<T> =
                        av.iter().zip(bv.iter()).map(|(&ai, &bi)| scale * (ai - bi)).collect();
                    drop(av);
                    drop(bv);
                    if a.requires_grad() {
                        a.accumulate_grad(&d);
                    }
                    if b.requires_grad() {
                        let neg: Vec<T> = d.iter().map(|&v| -v).collect();
                        b.accumulate_grad(&neg);
                    }
                }
            }

            Op::CrossEntropy { logits, targets, probs } => {
                if logits.requires_grad() {
                    let (rows, cols) = logits.shape();
                    let scale = g[0] / T::from_usize(rows);
                    let mut dl = vec![T::ZERO; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            let indicator = if c == targets[r] { T::ONE } else { T::ZERO };
                            dl[r * cols + c] = scale * (probs[r * cols + c] - indicator);
                        }
                    }
                    logits.accumulate_grad(&dl);
                }
            }

            Op::Pick { x, index } => {
                if x.requires_grad() {
                    let mut dx = vec![T::ZERO; x.len()];
                    dx[*index] = g[0];
                    x.accumulate_grad(&dx);
                }
            }

            Op::WeightedSum { terms } => {
                for (k, t) in terms {
                    if t.requires_grad() {
                        let dt: Vec<T> = g.iter().map(|&gi| gi * *k).collect();
                        t.accumulate_grad(&dt);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Softmax,
    Sigmoid,
}

impl<T: Real> Tensor<T> {
    /// y = x·Wᵀ + b with W stored [out, in], b [1, out].
    pub fn affine(&self, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (bs, in_dim) = self.shape();
        let (out_dim, w_in) = w.shape();
        if w_in != in_dim {
            return Err(shape_err("affine", self.shape(), w.shape()));
        }
        if b.shape() != (1, out_dim) {
            return Err(shape_err("affine bias", b.shape(), (1, out_dim)));
        }
        let mut y = vec![T::ZERO; bs * out_dim];
        {
            let xv = self.values();
            let wv = w.values();
            // B-operand is Wᵀ expressed through strides on W's [out,in] layout.
            gemm(
                bs,
                in_dim,
                out_dim,
                T::ONE,
                &xv,
                (in_dim as isize, 1),
                &wv,
                (1, in_dim as isize),
                T::ZERO,
                &mut y,
                (out_dim as isize, 1),
            );
            let bv = b.values();
            for r in 0..bs {
                for o in 0..out_dim {
                    y[r * out_dim + o] += bv[o];
                }
            }
        }
        Ok(Tensor::from_op(
            (bs, out_dim),
            y,
            Op::Affine { x: self.clone(), w: w.clone(), b: b.clone() },
        ))
    }

    /// Linear layer over a sparse binary input: row r of the result is
    /// bias + Σ table[i] over this row's active indices. `table` is [in, out].
    pub fn embed_sum(table: &Tensor<T>, bias: &Tensor<T>, idx: Rc<Vec<Vec<u32>>>) -> Result<Tensor<T>> {
        let (rows_in, d) = table.shape();
        if bias.shape() != (1, d) {
            return Err(shape_err("embed_sum bias", bias.shape(), (1, d)));
        }
        let bs = idx.len();
        let mut y = vec![T::ZERO; bs * d];
        {
            let tv = table.values();
            let bv = bias.values();
            for (r, row_idx) in idx.iter().enumerate() {
                let dst = &mut y[r * d..(r + 1) * d];
                dst.copy_from_slice(&bv);
                for &i in row_idx {
                    let i = i as usize;
                    if i >= rows_in {
                        return Err(Error::IndexOutOfRange {
                            op: "embed_sum",
                            index: i,
                            len: rows_in,
                        });
                    }
                    let src = &tv[i * d..(i + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += *b;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            (bs, d),
            y,
            Op::EmbedSum { table: table.clone(), bias: bias.clone(), idx },
        ))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ra, na) = self.shape();
        let (rb, nb) = other.shape();
        if ra != rb {
            return Err(shape_err("concat", self.shape(), other.shape()));
        }
        let n = na + nb;
        let mut y = vec![T::ZERO; ra * n];
        {
            let av = self.values();
            let bv = other.values();
            for r in 0..ra {
                y[r * n..r * n + na].copy_from_slice(&av[r * na..(r + 1) * na]);
                y[r * n + na..(r + 1) * n].copy_from_slice(&bv[r * nb..(r + 1) * nb]);
            }
        }
        Ok(Tensor::from_op((ra, n), y, Op::Concat { a: self.clone(), b: other.clone() }))
    }

    /// Contiguous row window [start, start+rows).
    pub fn row_slice(&self, start: usize, rows: usize) -> Result<Tensor<T>> {
        let (r, c) = self.shape();
        if start + rows > r {
            return Err(Error::IndexOutOfRange { op: "row_slice", index: start + rows, len: r });
        }
        let y = self.values()[start * c..(start + rows) * c].to_vec();
        Ok(Tensor::from_op((rows, c), y, Op::RowSlice { x: self.clone(), start }))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(shape_err("add", self.shape(), other.shape()));
        }
        let y: Vec<T> =
            self.values().iter().zip(other.values().iter()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(self.shape(), y, Op::Add { a: self.clone(), b: other.clone() }))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(shape_err("sub", self.shape(), other.shape()));
        }
        let y: Vec<T> =
            self.values().iter().zip(other.values().iter()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(self.shape(), y, Op::Sub { a: self.clone(), b: other.clone() }))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(shape_err("mul", self.shape(), other.shape()));
        }
        let y: Vec<T> =
            self.values().iter().zip(other.values().iter()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(self.shape(), y, Op::Mul { a: self.clone(), b: other.clone() }))
    }

    /// y = k·x + c elementwise.
    pub fn scale_shift(&self, k: T, c: T) -> Tensor<T> {
        let y: Vec<T> = self.values().iter().map(|&v| k * v + c).collect();
        Tensor::from_op(self.shape(), y, Op::ScaleShift { x: self.clone(), k })
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale_shift(-T::ONE, T::ZERO)
    }

    pub fn relu(&self) -> Tensor<T> {
        let y: Vec<T> = self.values().iter().map(|&v| v.maxv(T::ZERO)).collect();
        Tensor::from_op(self.shape(), y, Op::Relu { x: self.clone() })
    }

    /// ELU with α = 1.
    pub fn elu(&self) -> Tensor<T> {
        let y: Vec<T> =
            self.values().iter().map(|&v| if v > T::ZERO { v } else { v.exp() - T::ONE }).collect();
        Tensor::from_op(self.shape(), y, Op::Elu { x: self.clone() })
    }

    pub fn tanh(&self) -> Tensor<T> {
        let y: Vec<T> = self.values().iter().map(|&v| v.tanh()).collect();
        Tensor::from_op(self.shape(), y, Op::Tanh { x: self.clone() })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let y: Vec<T> =
            self.values().iter().map(|&v| T::ONE / (T::ONE + (-v).exp())).collect();
        Tensor::from_op(self.shape(), y, Op::Sigmoid { x: self.clone() })
    }

    pub fn exp(&self) -> Tensor<T> {
        let y: Vec<T> = self.values().iter().map(|&v| v.exp()).collect();
        Tensor::from_op(self.shape(), y, Op::Exp { x: self.clone() })
    }

    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let y: Vec<T> = self.values().iter().map(|&v| v.maxv(lo).minv(hi)).collect();
        Tensor::from_op(self.shape(), y, Op::Clamp { x: self.clone(), lo, hi })
    }

    /// Row-wise softmax (last axis), max-shifted for stability.
    pub fn softmax(&self) -> Tensor<T> {
        let (rows, cols) = self.shape();
        let xv = self.values();
        let mut y = vec![T::ZERO; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(row[0], |a, b| a.maxv(b));
            let mut z = T::ZERO;
            for c in 0..cols {
                let e = (row[c] - m).exp();
                y[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                y[r * cols + c] /= z;
            }
        }
        drop(xv);
        Tensor::from_op((rows, cols), y, Op::Softmax { x: self.clone() })
    }

    /// Row-wise log-softmax (last axis).
    pub fn log_softmax(&self) -> Tensor<T> {
        let (rows, cols) = self.shape();
        let xv = self.values();
        let mut y = vec![T::ZERO; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(row[0], |a, b| a.maxv(b));
            let z: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lz = z.ln() + m;
            for c in 0..cols {
                y[r * cols + c] = row[c] - lz;
            }
        }
        drop(xv);
        Tensor::from_op((rows, cols), y, Op::LogSoftmax { x: self.clone() })
    }

    pub fn activation(&self, kind: Activation) -> Tensor<T> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Elu => self.elu(),
            Activation::Tanh => self.tanh(),
            Activation::Softmax => self.softmax(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }

    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.values().iter().copied().sum();
        Tensor::from_op((1, 1), vec![s], Op::Sum { x: self.clone() })
    }

    pub fn mean(&self) -> Tensor<T> {
        let s: T = self.values().iter().copied().sum();
        let m = s / T::from_usize(self.len());
        Tensor::from_op((1, 1), vec![m], Op::Mean { x: self.clone() })
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(shape_err("mse", self.shape(), other.shape()));
        }
        let av = self.values();
        let bv = other.values();
        let mut s = T::ZERO;
        for (&a, &b) in av.iter().zip(bv.iter()) {
            let d = a - b;
            s += d * d;
        }
        let m = s / T::from_usize(self.len());
        drop(av);
        drop(bv);
        Ok(Tensor::from_op((1, 1), vec![m], Op::Mse { a: self.clone(), b: other.clone() }))
    }

    /// Mean over rows of −log softmax(row)[target]. A single row with one
    /// target index is exactly the classic scalar cross-entropy.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<T>> {
        let (rows, cols) = self.shape();
        if targets.len() != rows {
            return Err(shape_err("cross_entropy targets", (targets.len(), 1), (rows, 1)));
        }
        for &t in targets {
            if t >= cols {
                return Err(Error::IndexOutOfRange { op: "cross_entropy", index: t, len: cols });
            }
        }
        let xv = self.values();
        let mut probs = vec![T::ZERO; rows * cols];
        let mut loss = T::ZERO;
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(row[0], |a, b| a.maxv(b));
            let mut z = T::ZERO;
            for c in 0..cols {
                let e = (row[c] - m).exp();
                probs[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                probs[r * cols + c] /= z;
            }
            // −log p[target] computed in shifted coordinates for stability
            loss += z.ln() + m - row[targets[r]];
        }
        drop(xv);
        let mean = loss / T::from_usize(rows);
        Ok(Tensor::from_op(
            (1, 1),
            vec![mean],
            Op::CrossEntropy {
                logits: self.clone(),
                targets: Rc::new(targets.to_vec()),
                probs,
            },
        ))
    }

    /// Scalar view of one element by flat index.
    pub fn pick(&self, index: usize) -> Result<Tensor<T>> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange { op: "pick", index, len: self.len() });
        }
        let v = self.values()[index];
        Ok(Tensor::from_op((1, 1), vec![v], Op::Pick { x: self.clone(), index }))
    }
}

/// Σ kᵢ·xᵢ over same-shape tensors; the workhorse for weighted loss combos.
pub fn weighted_sum<T: Real>(terms: &[(T, Tensor<T>)]) -> Result<Tensor<T>> {
    let first = terms
        .first()
        .ok_or_else(|| Error::Usage("weighted_sum needs at least one term".into()))?;
    let shape = first.1.shape();
    let mut y = vec![T::ZERO; first.1.len()];
    for (k, t) in terms {
        if t.shape() != shape {
            return Err(shape_err("weighted_sum", t.shape(), shape));
        }
        for (acc, &v) in y.iter_mut().zip(t.values().iter()) {
            *acc += *k * v;
        }
    }
    Ok(Tensor::from_op(
        shape,
        y,
        Op::WeightedSum { terms: terms.to_vec() },
    ))
}
