use super::{uniform_init, ParamSet};
use crate::error::Error;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::Result;

/// LSTM cell with four separate gate matrices (input, forget, candidate,
/// output), each [hidden, input+hidden], and per-gate biases of length
/// hidden. Forget-gate bias starts at +1; everything else follows the
/// uniform ±1/√fan_in rule with zero biases.
pub struct LstmCellParams<T: Real> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub wi: Tensor<T>,
    pub wf: Tensor<T>,
    pub wg: Tensor<T>,
    pub wo: Tensor<T>,
    pub bi: Tensor<T>,
    pub bf: Tensor<T>,
    pub bg: Tensor<T>,
    pub bo: Tensor<T>,
}

impl<T: Real> LstmCellParams<T> {
    pub fn new(
        params: &mut ParamSet<T>,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = input_size + hidden_size;
        let shape = (hidden_size, fan_in);
        let wi = params.add(format!("{prefix}.wi"), uniform_init(rng, shape, fan_in));
        let wf = params.add(format!("{prefix}.wf"), uniform_init(rng, shape, fan_in));
        let wg = params.add(format!("{prefix}.wg"), uniform_init(rng, shape, fan_in));
        let wo = params.add(format!("{prefix}.wo"), uniform_init(rng, shape, fan_in));
        let bi = params.add(format!("{prefix}.bi"), Tensor::zeros((1, hidden_size), true));
        let bf = params.add(
            format!("{prefix}.bf"),
            Tensor::new((1, hidden_size), vec![T::ONE; hidden_size], true),
        );
        let bg = params.add(format!("{prefix}.bg"), Tensor::zeros((1, hidden_size), true));
        let bo = params.add(format!("{prefix}.bo"), Tensor::zeros((1, hidden_size), true));
        LstmCellParams { input_size, hidden_size, wi, wf, wg, wo, bi, bf, bg, bo }
    }

    /// Zero hidden/cell state for a batch.
    pub fn zero_state(&self, batch: usize) -> (Tensor<T>, Tensor<T>) {
        (Tensor::zeros((batch, self.hidden_size), false), Tensor::zeros((batch, self.hidden_size), false))
    }

    /// One gated update; differentiable through time when the returned state
    /// is fed back in.
    pub fn step(
        &self,
        x: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if x.shape().1 != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell input",
                lhs: format!("{}x{}", x.shape().0, x.shape().1),
                rhs: format!("input_size {}", self.input_size),
            });
        }
        if h.shape().1 != self.hidden_size || c.shape().1 != self.hidden_size {
            return Err(Error::ShapeMismatch {
                op: "lstm_cell state",
                lhs: format!("{}x{} / {}x{}", h.shape().0, h.shape().1, c.shape().0, c.shape().1),
                rhs: format!("hidden_size {}", self.hidden_size),
            });
        }
        let xh = x.concat(h)?;
        let i = xh.affine(&self.wi, &self.bi)?.sigmoid();
        let f = xh.affine(&self.wf, &self.bf)?.sigmoid();
        let g = xh.affine(&self.wg, &self.bg)?.tanh();
        let o = xh.affine(&self.wo, &self.bo)?.sigmoid();
        let c_next = f.mul(c)?.add(&i.mul(&g)?)?;
        let h_next = o.mul(&c_next.tanh())?;
        Ok((h_next, c_next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use crate::tensor::grad_check;

    fn tiny_cell() -> (ParamSet<f64>, LstmCellParams<f64>) {
        let mut rng = stream(5, Stream::Init(0));
        let mut ps = ParamSet::new();
        let cell = LstmCellParams::new(&mut ps, "lstm", 2, 3, &mut rng);
        (ps, cell)
    }

    #[test]
    fn zero_weights_and_inputs_give_zero_state() {
        let (ps, cell) = tiny_cell();
        for (_, t) in ps.iter() {
            t.set_values(&vec![0.0; t.len()]);
        }
        let x = Tensor::zeros((1, 2), false);
        let (h0, c0) = cell.zero_state(1);
        let (h1, c1) = cell.step(&x, &h0, &c0).unwrap();
        assert_eq!(h1.value_vec(), vec![0.0; 3]);
        assert_eq!(c1.value_vec(), vec![0.0; 3]);
    }

    #[test]
    fn single_unit_cell_matches_hand_computation() {
        // 1-in/1-unit cell with pinned weights; oracle is plain f64 gate math.
        let mut ps = ParamSet::new();
        let mut rng = stream(0, Stream::Init(0));
        let cell = LstmCellParams::new(&mut ps, "lstm", 1, 1, &mut rng);
        cell.wi.set_values(&[0.1, 0.2]);
        cell.bi.set_values(&[0.05]);
        cell.wf.set_values(&[-0.3, 0.4]);
        cell.bf.set_values(&[1.0]);
        cell.wg.set_values(&[0.7, -0.6]);
        cell.bg.set_values(&[0.0]);
        cell.wo.set_values(&[0.2, 0.1]);
        cell.bo.set_values(&[-0.2]);

        let (x, h, c) = (1.0f64, 0.5f64, -0.3f64);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.1 * x + 0.2 * h + 0.05);
        let f = sig(-0.3 * x + 0.4 * h + 1.0);
        let g = (0.7 * x - 0.6 * h).tanh();
        let o = sig(0.2 * x + 0.1 * h - 0.2);
        let c_want = f * c + i * g;
        let h_want = o * c_want.tanh();

        let (h1, c1) = cell
            .step(&Tensor::row(vec![x]), &Tensor::row(vec![h]), &Tensor::row(vec![c]))
            .unwrap();
        assert!((c1.scalar_value() - c_want).abs() < 1e-15, "c' = f⊙c + i⊙g");
        assert!((h1.scalar_value() - h_want).abs() < 1e-15, "h' = o⊙tanh(c')");
    }

    #[test]
    fn three_step_chain_matches_finite_differences() {
        let (ps, cell) = tiny_cell();
        let params: Vec<Tensor<f64>> = ps.iter().map(|(_, t)| t.clone()).collect();
        let xs = [
            Tensor::row(vec![0.3, -0.5]),
            Tensor::row(vec![-0.2, 0.8]),
            Tensor::row(vec![0.6, 0.1]),
        ];
        let err = grad_check(
            || {
                let (mut h, mut c) = cell.zero_state(1);
                for x in &xs {
                    let (h2, c2) = cell.step(x, &h, &c).unwrap();
                    h = h2;
                    c = c2;
                }
                h.mul(&h).unwrap().sum()
            },
            &params,
            1e-5,
        );
        assert!(err < 1e-4, "LSTM backward-through-time mismatch: {err}");
    }

    #[test]
    fn gate_shapes_follow_declared_layout() {
        let (_ps, cell) = tiny_cell();
        for w in [&cell.wi, &cell.wf, &cell.wg, &cell.wo] {
            assert_eq!(w.shape(), (3, 5), "gate matrices are [hidden, input+hidden]");
        }
        for b in [&cell.bi, &cell.bf, &cell.bg, &cell.bo] {
            assert_eq!(b.shape(), (1, 3), "gate biases have length hidden");
        }
        assert_eq!(cell.bf.value_vec(), vec![1.0; 3], "forget bias starts at +1");
        assert_eq!(cell.bi.value_vec(), vec![0.0; 3]);
    }

    #[test]
    fn history_matters() {
        let (_ps, cell) = tiny_cell();
        let x = Tensor::row(vec![0.4, -0.6]);
        let (h0, c0) = cell.zero_state(1);
        let (h1, c1) = cell.step(&x, &h0, &c0).unwrap();
        let (h_seq, _) = cell.step(&x, &h1, &c1).unwrap();
        let (h_fresh, _) = cell.step(&x, &h0, &c0).unwrap();
        assert_ne!(h_seq.value_vec(), h_fresh.value_vec(), "recurrence must carry state");
    }

    #[test]
    fn input_size_mismatch_is_a_dimension_error() {
        let (_ps, cell) = tiny_cell();
        let x = Tensor::row(vec![1.0]);
        let (h, c) = cell.zero_state(1);
        assert!(cell.step(&x, &h, &c).is_err());
    }
}
