//! Latent-space world model learned offline: an encoder into ℝ^d, a decoder
//! back to observations, a recurrent forward model predicting the next
//! latent from (latent, action), and an inverse model predicting the action
//! between two latents. The four parameter groups are trained jointly on
//! off-policy trajectory windows; the reward side later reuses the frozen
//! encoder/forward model.

mod eval;
mod train;

pub use eval::{
    decoder_agent_accuracy, distinct_latent_gap, forward_next_cell_accuracy, inverse_accuracy,
    inverse_mse,
};
pub use train::{train_dynamics, train_dynamics_masked, DynamicsHyper};

use std::rc::Rc;

use crate::env::{MazeLayout, MazeTraj, VecTraj};
use crate::error::Error;
use crate::nn::{EmbedLinear, Linear, LstmCellParams, ParamSet};
use crate::rng::Rng;
use crate::tensor::{weighted_sum, Real, Tensor};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Binary grid observations, 4 discrete actions (cross-entropy inverse).
    Maze,
    /// Dense vector observations, real-valued actions (mse inverse).
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DynamicsModelConfig {
    pub kind: DomainKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub latent_dim: usize,
    pub lstm_hidden: usize,
    /// Hidden width of the two-layer encoder/decoder (vector domain only).
    pub enc_hidden: usize,
    pub inv_hidden: usize,
}

impl DynamicsModelConfig {
    pub fn maze_default() -> Self {
        DynamicsModelConfig {
            kind: DomainKind::Maze,
            obs_dim: crate::env::MAZE_OBS_DIM,
            action_dim: 4,
            latent_dim: 256,
            lstm_hidden: 128,
            enc_hidden: 0,
            inv_hidden: 64,
        }
    }

    pub fn cont_default() -> Self {
        DynamicsModelConfig {
            kind: DomainKind::Continuous,
            obs_dim: crate::env::CONT_STATE_DIM,
            action_dim: crate::env::CONT_ACTION_DIM,
            latent_dim: 200,
            lstm_hidden: 200,
            enc_hidden: 200,
            inv_hidden: 64,
        }
    }

    /// Shrunk maze-style config for fast tests and finite-difference checks.
    pub fn maze_tiny(obs_dim: usize, latent_dim: usize) -> Self {
        DynamicsModelConfig {
            kind: DomainKind::Maze,
            obs_dim,
            action_dim: 4,
            latent_dim,
            lstm_hidden: latent_dim,
            enc_hidden: 0,
            inv_hidden: 8,
        }
    }

    pub fn cont_tiny(latent_dim: usize) -> Self {
        DynamicsModelConfig {
            kind: DomainKind::Continuous,
            obs_dim: crate::env::CONT_STATE_DIM,
            action_dim: crate::env::CONT_ACTION_DIM,
            latent_dim,
            lstm_hidden: latent_dim,
            enc_hidden: latent_dim,
            inv_hidden: 8,
        }
    }
}

enum Encoder<T: Real> {
    /// Sparse binary observations: embedding-sum (≡ linear layer on the
    /// dense 0/1 vector) followed by ReLU.
    Sparse(EmbedLinear<T>),
    /// Two linear layers with an ELU between them.
    Mlp(Linear<T>, Linear<T>),
}

enum Decoder<T: Real> {
    /// Single linear layer + ReLU back to the observation.
    Single(Linear<T>),
    Mlp(Linear<T>, Linear<T>),
}

/// A batch of observations at one time index, in whichever form the encoder
/// wants: index lists of the 1-bits (maze) or a dense matrix (continuous).
#[derive(Clone)]
pub enum ObsBatch<T: Real> {
    Sparse(Rc<Vec<Vec<u32>>>),
    Dense(Tensor<T>),
}

pub struct DynamicsModel<T: Real> {
    pub cfg: DynamicsModelConfig,
    pub params: ParamSet<T>,
    enc: Encoder<T>,
    dec: Decoder<T>,
    lstm: LstmCellParams<T>,
    head: Linear<T>,
    inv_hidden: Linear<T>,
    inv_out: Linear<T>,
}

impl<T: Real> DynamicsModel<T> {
    /// Parameter registration order is fixed (enc, dec, for, inv): it pins
    /// the init draws, the optimizer state layout, and the checkpoint order.
    pub fn new(cfg: DynamicsModelConfig, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new();
        let d = cfg.latent_dim;
        let enc = match cfg.kind {
            DomainKind::Maze => {
                Encoder::Sparse(EmbedLinear::new(&mut params, "enc.l1", cfg.obs_dim, d, rng))
            }
            DomainKind::Continuous => Encoder::Mlp(
                Linear::new(&mut params, "enc.l1", cfg.obs_dim, cfg.enc_hidden, rng),
                Linear::new(&mut params, "enc.l2", cfg.enc_hidden, d, rng),
            ),
        };
        let dec = match cfg.kind {
            DomainKind::Maze => Decoder::Single(Linear::new(&mut params, "dec.l1", d, cfg.obs_dim, rng)),
            DomainKind::Continuous => Decoder::Mlp(
                Linear::new(&mut params, "dec.l1", d, cfg.enc_hidden, rng),
                Linear::new(&mut params, "dec.l2", cfg.enc_hidden, cfg.obs_dim, rng),
            ),
        };
        let lstm = LstmCellParams::new(&mut params, "for.lstm", d, cfg.lstm_hidden, rng);
        let head = Linear::new(&mut params, "for.head", cfg.lstm_hidden + cfg.action_dim, d, rng);
        let inv_hidden = Linear::new(&mut params, "inv.l1", 2 * d, cfg.inv_hidden, rng);
        let inv_out = Linear::new(&mut params, "inv.l2", cfg.inv_hidden, cfg.action_dim, rng);
        DynamicsModel { cfg, params, enc, dec, lstm, head, inv_hidden, inv_out }
    }

    /// z = f_enc(s): deterministic map into the d-dimensional latent space.
    pub fn encode(&self, obs: &ObsBatch<T>) -> Result<Tensor<T>> {
        match (&self.enc, obs) {
            (Encoder::Sparse(e), ObsBatch::Sparse(idx)) => {
                Ok(e.forward_sparse(Rc::clone(idx))?.relu())
            }
            (Encoder::Sparse(e), ObsBatch::Dense(x)) => Ok(e.forward_dense(x)?.relu()),
            (Encoder::Mlp(l1, l2), ObsBatch::Dense(x)) => l2.forward(&l1.forward(x)?.elu()),
            (Encoder::Mlp(..), ObsBatch::Sparse(_)) => Err(Error::ShapeMismatch {
                op: "encode",
                lhs: "sparse observation".into(),
                rhs: "dense-input encoder".into(),
            }),
        }
    }

    /// ŝ = f_dec(z): back to observation space.
    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.dec {
            Decoder::Single(l) => Ok(l.forward(z)?.relu()),
            Decoder::Mlp(l1, l2) => l2.forward(&l1.forward(z)?.elu()),
        }
    }

    pub fn zero_hidden(&self, batch: usize) -> (Tensor<T>, Tensor<T>) {
        self.lstm.zero_state(batch)
    }

    /// One recurrent step: the LSTM consumes the latent, then the head maps
    /// [hidden ‖ action features] through a linear layer and tanh to ẑ'.
    pub fn forward_step(
        &self,
        z: &Tensor<T>,
        act_feat: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (h2, c2) = self.lstm.step(z, h, c)?;
        let zhat = self.head.forward(&h2.concat(act_feat)?)?.tanh();
        Ok((zhat, h2, c2))
    }

    /// Raw inverse-model output for a (z, z') pair batch: action logits in
    /// the discrete domain, a real action vector in the continuous one.
    pub fn inverse_out(&self, z: &Tensor<T>, z_next: &Tensor<T>) -> Result<Tensor<T>> {
        self.inv_out.forward(&self.inv_hidden.forward(&z.concat(z_next)?)?.relu())
    }

    /// Discrete action probabilities (softmax over the inverse logits).
    pub fn inverse_probs(&self, z: &Tensor<T>, z_next: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.inverse_out(z, z_next)?.softmax())
    }
}

/// λ-weights of the trajectory loss plus the switch for the decoder's
/// next-state term (which rides through the forward model and is dropped
/// together with it in the no-forward ablation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_dec: f64,
    pub lambda_for: f64,
    pub lambda_inv: f64,
    pub state_term: bool,
}

impl LossWeights {
    pub fn maze_paper(lambda_for: f64) -> Self {
        LossWeights { lambda_dec: 100.0, lambda_for, lambda_inv: 10.0, state_term: true }
    }
}

/// Which loss components a pretraining run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Forward model removed: λ_for = 0 and the decoder's next-state term
    /// dropped (it folds in the forward model's effect).
    NoForward,
    /// Inverse model removed: λ_inv = 0.
    NoInverse,
    /// Plain autoencoder: both removals.
    Autoencoder,
}

impl Ablation {
    pub fn apply(self, mut w: LossWeights) -> LossWeights {
        match self {
            Ablation::Full => {}
            Ablation::NoForward => {
                w.lambda_for = 0.0;
                w.state_term = false;
            }
            Ablation::NoInverse => w.lambda_inv = 0.0,
            Ablation::Autoencoder => {
                w.lambda_for = 0.0;
                w.state_term = false;
                w.lambda_inv = 0.0;
            }
        }
        w
    }

    pub fn tag(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoForward => "nof",
            Ablation::NoInverse => "noi",
            Ablation::Autoencoder => "ae",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "full" => Ablation::Full,
            "nof" => Ablation::NoForward,
            "noi" => Ablation::NoInverse,
            "ae" => Ablation::Autoencoder,
            _ => return None,
        })
    }
}

/// One minibatch of length-L trajectory windows, time-major.
pub struct DynBatch<T: Real> {
    pub steps: usize,
    pub batch: usize,
    /// Observations at t = 0..=L for the encoder.
    pub obs: Vec<ObsBatch<T>>,
    /// Dense decoder targets at t = 0..=L, shape [B, obs_dim].
    pub dense: Vec<Tensor<T>>,
    /// Action features at t = 0..L (one-hot rows or raw vectors), [B, act].
    pub act_feat: Vec<Tensor<T>>,
    /// Discrete action indices per step (empty in the continuous domain).
    pub act_idx: Vec<Vec<usize>>,
}

/// Assemble a time-major maze minibatch: sparse index lists for the encoder
/// and dense 0/1 targets for the decoder.
pub fn maze_batch<T: Real>(trajs: &[&MazeTraj], layout: &MazeLayout) -> DynBatch<T> {
    let b = trajs.len();
    let l = trajs[0].len();
    let obs_dim = crate::env::MAZE_OBS_DIM;
    let mut obs = Vec::with_capacity(l + 1);
    let mut dense = Vec::with_capacity(l + 1);
    for t in 0..=l {
        let mut idx_rows = Vec::with_capacity(b);
        let mut dense_vals = vec![T::ZERO; b * obs_dim];
        for (row, tr) in trajs.iter().enumerate() {
            let features = tr.obs(t).active_features(layout);
            for &f in &features {
                dense_vals[row * obs_dim + f as usize] = T::ONE;
            }
            idx_rows.push(features);
        }
        obs.push(ObsBatch::Sparse(Rc::new(idx_rows)));
        dense.push(Tensor::new((b, obs_dim), dense_vals, false));
    }
    let mut act_feat = Vec::with_capacity(l);
    let mut act_idx = Vec::with_capacity(l);
    for t in 0..l {
        let mut onehot = vec![T::ZERO; b * 4];
        let mut idx = Vec::with_capacity(b);
        for (row, tr) in trajs.iter().enumerate() {
            let a = tr.actions[t] as usize;
            onehot[row * 4 + a] = T::ONE;
            idx.push(a);
        }
        act_feat.push(Tensor::new((b, 4), onehot, false));
        act_idx.push(idx);
    }
    DynBatch { steps: l, batch: b, obs, dense, act_feat, act_idx }
}

/// Assemble a time-major continuous minibatch; the same dense states serve
/// as encoder inputs and decoder targets.
pub fn vec_batch<T: Real>(trajs: &[&VecTraj]) -> DynBatch<T> {
    let b = trajs.len();
    let l = trajs[0].len();
    let obs_dim = trajs[0].obs_dim;
    let act_dim = trajs[0].act_dim;
    let mut obs = Vec::with_capacity(l + 1);
    let mut dense = Vec::with_capacity(l + 1);
    for t in 0..=l {
        let mut vals = Vec::with_capacity(b * obs_dim);
        for tr in trajs {
            vals.extend(tr.state(t).iter().map(|&v| T::from_f64(v as f64)));
        }
        let x = Tensor::new((b, obs_dim), vals, false);
        obs.push(ObsBatch::Dense(x.clone()));
        dense.push(x);
    }
    let mut act_feat = Vec::with_capacity(l);
    for t in 0..l {
        let mut vals = Vec::with_capacity(b * act_dim);
        for tr in trajs {
            vals.extend(tr.action(t).iter().map(|&v| T::from_f64(v as f64)));
        }
        act_feat.push(Tensor::new((b, act_dim), vals, false));
    }
    DynBatch { steps: l, batch: b, obs, dense, act_feat, act_idx: Vec::new() }
}

/// Reported loss components (λ-unweighted means) plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub recon: f64,
    pub state: f64,
    pub forward: f64,
    pub inverse: f64,
    pub total: f64,
}

pub struct LossOutput<T: Real> {
    pub total: Tensor<T>,
    pub parts: LossParts,
}

fn mean_of<T: Real>(terms: &[Tensor<T>]) -> Result<Tensor<T>> {
    let w = T::from_f64(1.0 / terms.len() as f64);
    weighted_sum(&terms.iter().map(|t| (w, t.clone())).collect::<Vec<_>>())
}

/// Trajectory loss over a minibatch:
///   total = λ_dec·(L_recon + L_state) + λ_for·L_for + λ_inv·L_inv
/// with every component mean-reduced over batch, time, and elements.
/// L_for's target latent is detached: the encoder is trained through the
/// forward model's *input*, never pulled toward making targets easy.
/// Components whose weight is zero (or switched off) are skipped entirely,
/// so the parameters only they touch receive no gradient at all.
pub fn dynamics_loss<T: Real>(
    model: &DynamicsModel<T>,
    batch: &DynBatch<T>,
    w: &LossWeights,
) -> Result<LossOutput<T>> {
    let l = batch.steps;
    let dec_on = w.lambda_dec != 0.0;
    let for_on = w.lambda_for != 0.0;
    let state_on = w.state_term && dec_on;
    let inv_on = w.lambda_inv != 0.0;
    let needs_forward = for_on || state_on;
    let needs_next_z = needs_forward || inv_on;

    let mut zs = Vec::with_capacity(l + 1);
    for t in 0..=l {
        if t == l && !needs_next_z {
            break;
        }
        zs.push(model.encode(&batch.obs[t])?);
    }

    let mut recon_terms = Vec::new();
    let mut state_terms = Vec::new();
    let mut for_terms = Vec::new();
    let mut inv_terms = Vec::new();
    let (mut h, mut c) = model.zero_hidden(batch.batch);
    for t in 0..l {
        if dec_on {
            recon_terms.push(model.decode(&zs[t])?.mse(&batch.dense[t])?);
        }
        if needs_forward {
            let (zhat, h2, c2) = model.forward_step(&zs[t], &batch.act_feat[t], &h, &c)?;
            h = h2;
            c = c2;
            if for_on {
                for_terms.push(zhat.mse(&zs[t + 1].detach())?);
            }
            if state_on {
                state_terms.push(model.decode(&zhat)?.mse(&batch.dense[t + 1])?);
            }
        }
        if inv_on {
            let out = model.inverse_out(&zs[t], &zs[t + 1])?;
            let term = match model.cfg.kind {
                DomainKind::Maze => out.cross_entropy(&batch.act_idx[t])?,
                DomainKind::Continuous => out.mse(&batch.act_feat[t])?,
            };
            inv_terms.push(term);
        }
    }

    // canonical order: (λ_dec, recon), (λ_dec, state), (λ_for, for), (λ_inv, inv)
    let mut weighted: Vec<(T, Tensor<T>)> = Vec::with_capacity(4);
    let mut parts = LossParts { recon: 0.0, state: 0.0, forward: 0.0, inverse: 0.0, total: 0.0 };
    if dec_on {
        let recon = mean_of(&recon_terms)?;
        parts.recon = recon.scalar_value().to_f64();
        weighted.push((T::from_f64(w.lambda_dec), recon));
    }
    if state_on {
        let state = mean_of(&state_terms)?;
        parts.state = state.scalar_value().to_f64();
        weighted.push((T::from_f64(w.lambda_dec), state));
    }
    if for_on {
        let fwd = mean_of(&for_terms)?;
        parts.forward = fwd.scalar_value().to_f64();
        weighted.push((T::from_f64(w.lambda_for), fwd));
    }
    if inv_on {
        let inv = mean_of(&inv_terms)?;
        parts.inverse = inv.scalar_value().to_f64();
        weighted.push((T::from_f64(w.lambda_inv), inv));
    }
    let total =
        if weighted.is_empty() { Tensor::scalar(T::ZERO) } else { weighted_sum(&weighted)? };
    parts.total = total.scalar_value().to_f64();
    if !parts.total.is_finite() {
        return Err(Error::NonFiniteLoss { context: format!("dynamics loss parts {parts:?}") });
    }
    Ok(LossOutput { total, parts })
}
