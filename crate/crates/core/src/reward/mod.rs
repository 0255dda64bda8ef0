//! Recurrent actor-critic over the latent space. A small LSTM trunk reads
//! encoder latents and feeds two single-layer heads: action logits (maze) or
//! a Gaussian mean (continuous), and a scalar value estimate. Training is
//! n-step advantage actor-critic run by asynchronous workers against a
//! shared parameter store; see `train` for the worker loop and `store` for
//! the snapshot/apply protocol.

mod store;
mod train;

pub use store::ParamStore;
pub use train::{
    train_run, EpisodeRow, JointSchedule, NamedTensors, RunKind, RunOutput, RunSpec,
    WorkerEnvSpec,
};

use crate::dynamics::DomainKind;
use crate::error::Error;
use crate::nn::{Linear, LstmCellParams, ParamSet};
use crate::rng::Rng;
use crate::tensor::{weighted_sum, Real, Tensor};
use crate::Result;

/// ln(2π), the constant in the Gaussian log-density.
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Bounds on the learned log standard deviation of the continuous policy.
/// exp(−5) ≈ 0.0067 keeps the density finite; exp(2) ≈ 7.4 keeps sampled
/// pre-squash actions in a sane range.
const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardModelConfig {
    pub kind: DomainKind,
    /// Width of the encoder latents this head consumes.
    pub latent_dim: usize,
    /// LSTM trunk width; 0 drops the recurrence and feeds latents straight
    /// into the heads.
    pub lstm_hidden: usize,
    /// Discrete action count, or the dimension of the Gaussian mean.
    pub action_dim: usize,
}

impl RewardModelConfig {
    pub fn maze_default() -> Self {
        RewardModelConfig { kind: DomainKind::Maze, latent_dim: 256, lstm_hidden: 128, action_dim: 4 }
    }

    pub fn cont_default() -> Self {
        RewardModelConfig {
            kind: DomainKind::Continuous,
            latent_dim: 200,
            lstm_hidden: 200,
            action_dim: 2,
        }
    }

    /// Shrunk maze head for fast tests.
    pub fn maze_tiny(latent_dim: usize) -> Self {
        RewardModelConfig { kind: DomainKind::Maze, latent_dim, lstm_hidden: 8, action_dim: 4 }
    }

    pub fn cont_tiny(latent_dim: usize) -> Self {
        RewardModelConfig { kind: DomainKind::Continuous, latent_dim, lstm_hidden: 8, action_dim: 2 }
    }
}

/// Actor/critic heads plus the optional LSTM trunk. Heads start at zero so
/// an untrained model is exactly the uniform policy with V = 0; the trunk
/// keeps the usual random init because zero LSTMs have zero gradients.
pub struct RewardModel<T: Real> {
    pub cfg: RewardModelConfig,
    pub params: ParamSet<T>,
    lstm: Option<LstmCellParams<T>>,
    actor: Linear<T>,
    critic: Linear<T>,
    /// Continuous only: free per-dimension log standard deviation,
    /// initialized to 0 and clamped to [−5, 2] wherever it is read.
    log_std: Option<Tensor<T>>,
}

/// One recurrent evaluation step: distribution parameters (logits or mean),
/// value estimate, and the advanced hidden state.
pub struct PolicyValue<T: Real> {
    pub dist: Tensor<T>,
    pub value: Tensor<T>,
    pub h: Tensor<T>,
    pub c: Tensor<T>,
}

impl<T: Real> RewardModel<T> {
    pub fn new(cfg: RewardModelConfig, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new();
        let lstm = if cfg.lstm_hidden > 0 {
            Some(LstmCellParams::new(&mut params, "rew.lstm", cfg.latent_dim, cfg.lstm_hidden, rng))
        } else {
            None
        };
        let feat = if cfg.lstm_hidden > 0 { cfg.lstm_hidden } else { cfg.latent_dim };
        let actor = Linear::new_zeroed(&mut params, "rew.actor", feat, cfg.action_dim);
        let critic = Linear::new_zeroed(&mut params, "rew.critic", feat, 1);
        let log_std = match cfg.kind {
            DomainKind::Maze => None,
            DomainKind::Continuous => {
                Some(params.add("rew.log_std", Tensor::zeros((1, cfg.action_dim), true)))
            }
        };
        RewardModel { cfg, params, lstm, actor, critic, log_std }
    }

    pub fn zero_hidden(&self, batch: usize) -> (Tensor<T>, Tensor<T>) {
        match &self.lstm {
            Some(cell) => cell.zero_state(batch),
            // Keep the (h, c) plumbing uniform even without a trunk.
            None => (Tensor::zeros((batch, 1), false), Tensor::zeros((batch, 1), false)),
        }
    }

    /// Advances the trunk one step and reads both heads. `dist` holds raw
    /// logits for a discrete model and the Gaussian mean for a continuous
    /// one; combine with `log_std_clamped` for the full distribution.
    pub fn policy_value(
        &self,
        z: &Tensor<T>,
        h: &Tensor<T>,
        c: &Tensor<T>,
    ) -> Result<PolicyValue<T>> {
        let (feat, h2, c2) = match &self.lstm {
            Some(cell) => {
                let (h2, c2) = cell.step(z, h, c)?;
                (h2.clone(), h2, c2)
            }
            None => (z.clone(), h.clone(), c.clone()),
        };
        let dist = self.actor.forward(&feat)?;
        let value = self.critic.forward(&feat)?;
        Ok(PolicyValue { dist, value, h: h2, c: c2 })
    }

    /// The learned log-σ vector with the [−5, 2] clamp applied (continuous
    /// models only).
    pub fn log_std_clamped(&self) -> Result<Tensor<T>> {
        match &self.log_std {
            Some(p) => Ok(p.clamp(T::from_f64(LOG_STD_MIN), T::from_f64(LOG_STD_MAX))),
            None => Err(Error::Usage("log_std is only defined for continuous models".into())),
        }
    }

    /// Softmax probabilities of one logits row, as plain numbers for action
    /// sampling (no graph involvement).
    pub fn action_probs(&self, logits: &Tensor<T>) -> Vec<f64> {
        let row = logits.values();
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Log-probability and entropy of an executed discrete action, built on
    /// the live graph so both differentiate back into the actor head.
    pub fn discrete_terms(&self, logits: &Tensor<T>, action: usize) -> Result<StepTerms<T>> {
        if action >= self.cfg.action_dim {
            return Err(Error::IndexOutOfRange {
                op: "discrete_terms",
                index: action,
                len: self.cfg.action_dim,
            });
        }
        let logp_all = logits.log_softmax();
        let probs = logits.softmax();
        let logp = logp_all.pick(action)?;
        let entropy = probs.mul(&logp_all)?.sum().neg();
        Ok(StepTerms { logp, entropy })
    }

    /// Log-density and entropy of an executed continuous action under the
    /// diagonal Gaussian `N(mean, exp(log_std)²)`. `action_raw` is the
    /// pre-squash sample, treated as a constant.
    pub fn gaussian_terms(&self, mean: &Tensor<T>, action_raw: &[f64]) -> Result<StepTerms<T>> {
        let k = self.cfg.action_dim;
        if action_raw.len() != k || mean.shape() != (1, k) {
            return Err(Error::ShapeMismatch {
                op: "gaussian_terms",
                lhs: format!("action len {}", action_raw.len()),
                rhs: format!("mean {}x{}", mean.shape().0, mean.shape().1),
            });
        }
        let log_std = self.log_std_clamped()?;
        let a = Tensor::row(action_raw.iter().map(|&v| T::from_f64(v)).collect());
        let diff = a.sub(mean)?;
        let zscore = diff.mul(&log_std.neg().exp())?;
        let sq_sum = zscore.mul(&zscore)?.sum();
        let sigma_sum = log_std.sum();
        // log N(a) = −½ Σ z² − Σ log σ − (k/2)·ln 2π
        let logp = weighted_sum(&[(T::from_f64(-0.5), sq_sum), (-T::ONE, sigma_sum.clone())])?
            .scale_shift(T::ONE, T::from_f64(-(k as f64) * 0.5 * LN_2PI));
        // H = Σ log σ + (k/2)·(1 + ln 2π); independent of the mean.
        let entropy =
            sigma_sum.scale_shift(T::ONE, T::from_f64(k as f64 * 0.5 * (1.0 + LN_2PI)));
        Ok(StepTerms { logp, entropy })
    }
}

/// Per-step graph handles collected during a rollout: log π(a_t|z_t) of the
/// executed action and the policy entropy at that step.
pub struct StepTerms<T: Real> {
    pub logp: Tensor<T>,
    pub entropy: Tensor<T>,
}

/// Draws an index from a categorical distribution given its probabilities.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    use rand::Rng as _;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Standard normal draws via Box–Muller, two uniforms per pair. Kept local
/// and branch-free so worker RNG consumption is reproducible.
pub fn sample_standard_normals(n: usize, rng: &mut Rng) -> Vec<f64> {
    use rand::Rng as _;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.gen::<f64>().max(1e-300); // ln(0) guard
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        out.push(r * theta.cos());
        if out.len() < n {
            out.push(r * theta.sin());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardHyper {
    /// Weight of the critic term relative to the actor term.
    pub lambda_critic: f64,
    /// Entropy regularization coefficient.
    pub beta: f64,
    /// Discount factor, in (0, 1].
    pub gamma: f64,
    /// Maximum steps per update segment.
    pub t_max: usize,
    pub workers: usize,
    /// Total episodes across all workers before training stops.
    pub episode_budget: u64,
    pub lr: f64,
    /// Global-norm gradient clip applied to each worker's update.
    pub clip_norm: f64,
    /// Optional early stop: halt once the mean undiscounted return over the
    /// last 100 episodes reaches this value.
    pub stop_return: Option<f64>,
}

impl RewardHyper {
    pub fn maze_paper() -> Self {
        RewardHyper {
            lambda_critic: 0.5,
            beta: 1e-3,
            gamma: 0.99,
            t_max: 20,
            workers: 40,
            episode_budget: 10_000,
            lr: 1e-4,
            clip_norm: 40.0,
            stop_return: None,
        }
    }

    pub fn cont_paper() -> Self {
        RewardHyper {
            workers: 16,
            episode_budget: 1_000_000,
            ..RewardHyper::maze_paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config {
                field: "gamma".into(),
                reason: format!("must lie in (0, 1], got {}", self.gamma),
            });
        }
        if self.t_max < 1 {
            return Err(Error::Config { field: "t_max".into(), reason: "must be ≥ 1".into() });
        }
        if self.workers < 1 {
            return Err(Error::Config { field: "workers".into(), reason: "must be ≥ 1".into() });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config {
                field: "lr".into(),
                reason: format!("must be positive and finite, got {}", self.lr),
            });
        }
        for (name, v) in [
            ("lambda_critic", self.lambda_critic),
            ("beta", self.beta),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: name.into(),
                    reason: format!("must be nonnegative and finite, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// n-step bootstrapped returns by backward recursion: R_t = r_t + γ·R_{t+1},
/// seeded with the bootstrap value (0 at a terminal, V(z_end) otherwise).
pub fn compute_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut r = bootstrap;
    for (i, &reward) in rewards.iter().enumerate().rev() {
        r = reward + gamma * r;
        out[i] = r;
    }
    out
}

/// One on-policy update segment: per-step graph handles plus the numeric
/// rewards and the bootstrap value at the segment's end.
pub struct Segment<T: Real> {
    pub logps: Vec<Tensor<T>>,
    pub values: Vec<Tensor<T>>,
    pub entropies: Vec<Tensor<T>>,
    pub rewards: Vec<f64>,
    pub bootstrap: f64,
}

impl<T: Real> Segment<T> {
    pub fn new(bootstrap: f64) -> Self {
        Segment {
            logps: Vec::new(),
            values: Vec::new(),
            entropies: Vec::new(),
            rewards: Vec::new(),
            bootstrap,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Unweighted sums of the three loss components over a segment, plus the
/// weighted total actually optimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardLossParts {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Advantage actor-critic objective over one segment:
///
///   Σ_t [ −log π(a_t|z_t)·(R_t − V(z_t))  +  λ_critic·(R_t − V(z_t))²  −  β·H_t ]
///
/// The advantage multiplying log π is a constant (no gradient flows through
/// V in the actor term); the critic term differentiates through V as usual.
pub fn actor_critic_loss<T: Real>(
    seg: &Segment<T>,
    hyper: &RewardHyper,
) -> Result<(Tensor<T>, RewardLossParts)> {
    let n = seg.len();
    if n == 0 {
        return Err(Error::Usage("actor_critic_loss needs a non-empty segment".into()));
    }
    if n > hyper.t_max {
        return Err(Error::Usage(format!(
            "segment length {n} exceeds t_max {}",
            hyper.t_max
        )));
    }
    if seg.logps.len() != n || seg.values.len() != n || seg.entropies.len() != n {
        return Err(Error::Usage("segment field lengths disagree".into()));
    }
    let returns = compute_returns(&seg.rewards, seg.bootstrap, hyper.gamma);

    let mut actor_terms = Vec::with_capacity(n);
    let mut critic_terms = Vec::with_capacity(n);
    let mut entropy_terms = Vec::with_capacity(n);
    for t in 0..n {
        let v = &seg.values[t];
        // Advantage as a plain number: this is the stop-gradient.
        let adv = returns[t] - v.scalar_value().to_f64();
        actor_terms.push((T::from_f64(-adv), seg.logps[t].clone()));
        let delta = v.scale_shift(-T::ONE, T::from_f64(returns[t])); // R_t − V
        critic_terms.push((T::ONE, delta.mul(&delta)?));
        entropy_terms.push((T::ONE, seg.entropies[t].clone()));
    }
    let actor = weighted_sum(&actor_terms)?;
    let critic = weighted_sum(&critic_terms)?;
    let entropy = weighted_sum(&entropy_terms)?;
    let total = weighted_sum(&[
        (T::ONE, actor.clone()),
        (T::from_f64(hyper.lambda_critic), critic.clone()),
        (T::from_f64(-hyper.beta), entropy.clone()),
    ])?;
    let total_v = total.scalar_value().to_f64();
    if !total_v.is_finite() {
        return Err(Error::NonFiniteLoss { context: "actor_critic_loss".into() });
    }
    let parts = RewardLossParts {
        actor: actor.scalar_value().to_f64(),
        critic: critic.scalar_value().to_f64(),
        entropy: entropy.scalar_value().to_f64(),
        total: total_v,
    };
    Ok((total, parts))
}
