use std::rc::Rc;

use super::{uniform_init, ParamSet};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::Result;

/// Dense linear layer, weight [out, in], bias [1, out] zero-initialized.
pub struct Linear<T: Real> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = params.add(format!("{prefix}.w"), uniform_init(rng, (out_dim, in_dim), in_dim));
        let b = params.add(format!("{prefix}.b"), Tensor::zeros((1, out_dim), true));
        Linear { w, b }
    }

    /// Zero-initialized weight *and* bias (actor/critic heads: uniform policy
    /// and V = 0 before any training).
    pub fn new_zeroed(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = params.add(format!("{prefix}.w"), Tensor::zeros((out_dim, in_dim), true));
        let b = params.add(format!("{prefix}.b"), Tensor::zeros((1, out_dim), true));
        Linear { w, b }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.affine(&self.w, &self.b)
    }
}

/// Linear layer specialized for sparse binary inputs: the weight table is
/// stored [in, out] so a forward pass is a gather-and-sum of the active rows.
/// Numerically identical to `Linear` applied to the equivalent 0/1 vector.
pub struct EmbedLinear<T: Real> {
    pub table: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> EmbedLinear<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let table = params.add(format!("{prefix}.w"), uniform_init(rng, (in_dim, out_dim), in_dim));
        let bias = params.add(format!("{prefix}.b"), Tensor::zeros((1, out_dim), true));
        EmbedLinear { table, bias }
    }

    /// Batch forward from per-row active-index lists.
    pub fn forward_sparse(&self, idx: Rc<Vec<Vec<u32>>>) -> Result<Tensor<T>> {
        Tensor::embed_sum(&self.table, &self.bias, idx)
    }

    /// Forward from dense rows; only meaningful for (near-)binary inputs —
    /// entries > 0.5 are treated as active.
    pub fn forward_dense(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let half = T::from_f64(0.5);
        let (rows, cols) = x.shape();
        let xv = x.values();
        let mut idx = Vec::with_capacity(rows);
        for r in 0..rows {
            let row: Vec<u32> = (0..cols)
                .filter(|&c| xv[r * cols + c] > half)
                .map(|c| c as u32)
                .collect();
            idx.push(row);
        }
        drop(xv);
        self.forward_sparse(Rc::new(idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn affine_identity_and_hand_case() {
        // identity W, zero b: passthrough
        let x = Tensor::row(vec![1.0f64, 0.0]);
        let w = Tensor::new((2, 2), vec![1.0, 0.0, 0.0, 1.0], false);
        let b = Tensor::row(vec![0.0, 0.0]);
        assert_eq!(x.affine(&w, &b).unwrap().value_vec(), vec![1.0, 0.0]);

        // x=[1,2], W=[[1,1],[0,1]], b=[1,0] → xWᵀ+b = [4,2]
        let x = Tensor::row(vec![1.0f64, 2.0]);
        let w = Tensor::new((2, 2), vec![1.0, 1.0, 0.0, 1.0], false);
        let b = Tensor::row(vec![1.0, 0.0]);
        assert_eq!(x.affine(&w, &b).unwrap().value_vec(), vec![4.0, 2.0]);
    }

    #[test]
    fn affine_grad_wrt_bias_of_sum_is_ones() {
        let x = Tensor::new((3, 2), vec![0.1f64, 0.2, -0.3, 0.4, 0.5, -0.6], false);
        let w = Tensor::new((2, 2), vec![0.7, -0.1, 0.3, 0.9], false);
        let b = Tensor::new((1, 2), vec![0.0, 0.0], true);
        x.affine(&w, &b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![3.0, 3.0], "db of sum = batch row count per unit");
    }

    #[test]
    fn affine_shape_mismatch_names_both_shapes() {
        let x = Tensor::row(vec![1.0f64, 2.0, 3.0]);
        let w = Tensor::new((2, 2), vec![1.0; 4], false);
        let b = Tensor::row(vec![0.0, 0.0]);
        let err = x.affine(&w, &b).unwrap_err().to_string();
        assert!(err.contains("1x3") && err.contains("2x2"), "unhelpful error: {err}");
    }

    #[test]
    fn embed_linear_matches_dense_affine_on_binary_input() {
        let mut rng = stream(11, Stream::Init(0));
        let mut ps = ParamSet::<f64>::new();
        let emb = EmbedLinear::new(&mut ps, "e", 7, 3, &mut rng);

        // equivalent dense layer: W_dense[o][i] = table[i][o]
        let tv = emb.table.value_vec();
        let mut wd = vec![0.0; 3 * 7];
        for i in 0..7 {
            for o in 0..3 {
                wd[o * 7 + i] = tv[i * 3 + o];
            }
        }
        let w = Tensor::new((3, 7), wd, false);
        let b = Tensor::row(vec![0.0; 3]);

        let x_dense = Tensor::new((2, 7), vec![
            1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
        ], false);
        let via_affine = x_dense.affine(&w, &b).unwrap().value_vec();
        let via_embed = emb.forward_dense(&x_dense).unwrap().value_vec();
        for (a, e) in via_affine.iter().zip(&via_embed) {
            assert!((a - e).abs() < 1e-12, "sparse and dense paths must agree: {a} vs {e}");
        }
    }
}
