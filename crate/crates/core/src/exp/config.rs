//! One TOML document describes one experiment: the scenario, the
//! environment, and every module's hyperparameters, with the paper defaults
//! embedded so a minimal file like `scenario = "pretrain"` is already a
//! complete maze run. `print-config` dumps the fully-expanded document; a
//! parsed config round-trips exactly.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Ablation, DomainKind, DynamicsHyper, DynamicsModelConfig};
use crate::env::{ContinuousEnvConfig, CONT_ACTION_DIM, CONT_STATE_DIM, MAZE_OBS_DIM};
use crate::error::Error;
use crate::planner::PlanConfig;
use crate::reward::{JointSchedule, RewardHyper, RewardModelConfig, RunKind, RunSpec, WorkerEnvSpec};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Offline world-model training on a random-policy dataset.
    Pretrain,
    /// Policy/value training over a frozen pretrained encoder.
    Reward,
    /// Policy/value training with the dynamics losses in the loop.
    Joint,
    /// End-to-end actor-critic from scratch (encoder trained by reward only).
    Baseline,
    /// Frozen dynamics from a source task, reward retrained on this config's
    /// environment (which is expected to carry the changed reward).
    TransferReward,
    /// Encoder/decoder pinned from a source task, forward+inverse re-fit
    /// offline on this config's environment, then reward trained fresh.
    TransferDynamics,
    /// Both transfers composed: re-fit forward+inverse, then retrain reward
    /// on an environment whose dynamics and reward both changed.
    TransferBoth,
    /// Pretraining arm without the forward-model losses, plus reward training.
    AblateNof,
    /// Pretraining arm without the inverse loss, plus reward training.
    AblateNoi,
    /// Autoencoder-only pretraining arm, plus reward training.
    AblateAe,
    /// Reward training with tree-search action selection in the loop.
    PlanEval,
}

impl Scenario {
    /// Directory/file tag; identical to the config-file spelling.
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::Pretrain => "pretrain",
            Scenario::Reward => "reward",
            Scenario::Joint => "joint",
            Scenario::Baseline => "baseline",
            Scenario::TransferReward => "transfer-reward",
            Scenario::TransferDynamics => "transfer-dynamics",
            Scenario::TransferBoth => "transfer-both",
            Scenario::AblateNof => "ablate-nof",
            Scenario::AblateNoi => "ablate-noi",
            Scenario::AblateAe => "ablate-ae",
            Scenario::PlanEval => "plan-eval",
        }
    }

    /// Scenarios that read a pretrained dynamics checkpoint from `inputs`.
    pub fn needs_dynamics_checkpoint(self) -> bool {
        matches!(
            self,
            Scenario::Reward
                | Scenario::TransferReward
                | Scenario::TransferDynamics
                | Scenario::TransferBoth
                | Scenario::PlanEval
        )
    }

    /// Scenarios that re-fit forward/inverse offline before reward training.
    pub fn refits_dynamics(self) -> bool {
        matches!(self, Scenario::TransferDynamics | Scenario::TransferBoth)
    }

    /// Scenarios that run their own pretraining stage (the ablation arms).
    pub fn pretrain_ablation(self) -> Option<Ablation> {
        match self {
            Scenario::Pretrain => Some(Ablation::Full),
            Scenario::AblateNof => Some(Ablation::NoForward),
            Scenario::AblateNoi => Some(Ablation::NoInverse),
            Scenario::AblateAe => Some(Ablation::Autoencoder),
            _ => None,
        }
    }

    /// Scenarios that produce an episode log (everything but pure pretrain).
    pub fn trains_reward(self) -> bool {
        self != Scenario::Pretrain
    }

    pub fn run_kind(self, joint: &JointSection) -> RunKind {
        match self {
            Scenario::Joint => {
                RunKind::Joint { cut_reward_to_encoder: joint.cut_reward_to_encoder }
            }
            Scenario::Baseline => RunKind::Baseline,
            _ => RunKind::Frozen,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Default-value functions for serde, pulled from the authoritative
/// constructors so a partial config file inherits the paper numbers.
mod d {
    use super::*;

    pub fn seeds() -> Vec<u64> {
        vec![1, 2, 3, 4, 5]
    }
    pub fn out_dir() -> String {
        "runs".into()
    }

    pub fn slip() -> f64 {
        0.0
    }
    pub fn mass() -> f64 {
        ContinuousEnvConfig::default().mass
    }
    pub fn damping() -> f64 {
        ContinuousEnvConfig::default().damping
    }
    pub fn ctrl_cost() -> f64 {
        ContinuousEnvConfig::default().ctrl_cost
    }
    pub fn reward_sign() -> f64 {
        ContinuousEnvConfig::default().reward_sign
    }
    pub fn episode_cap() -> u32 {
        ContinuousEnvConfig::default().episode_cap
    }
    pub fn dt() -> f64 {
        ContinuousEnvConfig::default().dt
    }

    pub fn latent_dim() -> usize {
        DynamicsModelConfig::maze_default().latent_dim
    }
    pub fn dyn_lstm_hidden() -> usize {
        DynamicsModelConfig::maze_default().lstm_hidden
    }
    pub fn enc_hidden() -> usize {
        DynamicsModelConfig::maze_default().enc_hidden
    }
    pub fn inv_hidden() -> usize {
        DynamicsModelConfig::maze_default().inv_hidden
    }
    pub fn rew_lstm_hidden() -> usize {
        RewardModelConfig::maze_default().lstm_hidden
    }

    pub fn epochs() -> usize {
        DynamicsHyper::maze_paper().epochs
    }
    pub fn batch_size() -> usize {
        DynamicsHyper::maze_paper().batch_size
    }
    pub fn pre_lr() -> f64 {
        DynamicsHyper::maze_paper().lr
    }
    pub fn lambda_dec() -> f64 {
        DynamicsHyper::maze_paper().lambda_dec
    }
    pub fn lambda_inv() -> f64 {
        DynamicsHyper::maze_paper().lambda_inv
    }
    pub fn lambda_for_start() -> f64 {
        DynamicsHyper::maze_paper().lambda_for_start
    }
    pub fn lambda_for_end() -> f64 {
        DynamicsHyper::maze_paper().lambda_for_end
    }
    pub fn trajectories() -> usize {
        25_000
    }
    pub fn traj_len() -> usize {
        5
    }
    pub fn held_out() -> usize {
        2_000
    }

    pub fn rew_lr() -> f64 {
        RewardHyper::maze_paper().lr
    }
    pub fn workers() -> usize {
        RewardHyper::maze_paper().workers
    }
    pub fn episode_budget() -> u64 {
        RewardHyper::maze_paper().episode_budget
    }
    pub fn t_max() -> usize {
        RewardHyper::maze_paper().t_max
    }
    pub fn gamma() -> f64 {
        RewardHyper::maze_paper().gamma
    }
    pub fn beta() -> f64 {
        RewardHyper::maze_paper().beta
    }
    pub fn lambda_critic() -> f64 {
        RewardHyper::maze_paper().lambda_critic
    }
    pub fn clip_norm() -> f64 {
        RewardHyper::maze_paper().clip_norm
    }

    pub fn cut() -> bool {
        true
    }
    pub fn depth() -> usize {
        0
    }
    pub fn max_depth() -> usize {
        PlanConfig::off().max_depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSection {
    Maze {
        /// Probability the executed action is replaced by a random one.
        #[serde(default = "d::slip")]
        slip: f64,
        /// Flip the sign of every reward (the reward-transfer task).
        #[serde(default)]
        negate: bool,
    },
    Continuous {
        #[serde(default = "d::mass")]
        mass: f64,
        #[serde(default = "d::damping")]
        damping: f64,
        #[serde(default = "d::ctrl_cost")]
        ctrl_cost: f64,
        /// −1.0 turns the task into its negated-reward twin.
        #[serde(default = "d::reward_sign")]
        reward_sign: f64,
        #[serde(default = "d::episode_cap")]
        episode_cap: u32,
        #[serde(default = "d::dt")]
        dt: f64,
    },
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection::Maze { slip: d::slip(), negate: false }
    }
}

impl EnvSection {
    pub fn continuous_default() -> Self {
        let c = ContinuousEnvConfig::default();
        EnvSection::Continuous {
            mass: c.mass,
            damping: c.damping,
            ctrl_cost: c.ctrl_cost,
            reward_sign: c.reward_sign,
            episode_cap: c.episode_cap,
            dt: c.dt,
        }
    }

    /// The dynamics-transfer target: mass ×2, damping ×3, reward unchanged.
    pub fn continuous_modified() -> Self {
        let c = ContinuousEnvConfig::default().modified_dynamics();
        EnvSection::Continuous {
            mass: c.mass,
            damping: c.damping,
            ctrl_cost: c.ctrl_cost,
            reward_sign: c.reward_sign,
            episode_cap: c.episode_cap,
            dt: c.dt,
        }
    }

    pub fn domain(&self) -> DomainKind {
        match self {
            EnvSection::Maze { .. } => DomainKind::Maze,
            EnvSection::Continuous { .. } => DomainKind::Continuous,
        }
    }

    pub fn worker_spec(&self) -> WorkerEnvSpec {
        match *self {
            EnvSection::Maze { slip, negate } => WorkerEnvSpec::Maze { slip, negate },
            EnvSection::Continuous { .. } => WorkerEnvSpec::Continuous(self.continuous_config()),
        }
    }

    /// Panics on a maze section; callers gate on `domain()`.
    pub fn continuous_config(&self) -> ContinuousEnvConfig {
        match *self {
            EnvSection::Continuous { mass, damping, ctrl_cost, reward_sign, episode_cap, dt } => {
                ContinuousEnvConfig { mass, damping, ctrl_cost, reward_sign, episode_cap, dt }
            }
            EnvSection::Maze { .. } => unreachable!("continuous_config on a maze env"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            EnvSection::Maze { slip, .. } => {
                if !(0.0..=1.0).contains(&slip) {
                    return Err(Error::Config {
                        field: "env.slip".into(),
                        reason: format!("must lie in [0, 1], got {slip}"),
                    });
                }
            }
            EnvSection::Continuous { .. } => {
                self.continuous_config().validate().map_err(|e| Error::Config {
                    field: "env".into(),
                    reason: e.to_string(),
                })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d::latent_dim")]
    pub latent_dim: usize,
    /// LSTM width of the forward model.
    #[serde(default = "d::dyn_lstm_hidden")]
    pub dyn_lstm_hidden: usize,
    /// Hidden width of the continuous encoder MLP (0 on the maze: its
    /// encoder is a single linear layer).
    #[serde(default = "d::enc_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "d::inv_hidden")]
    pub inv_hidden: usize,
    /// LSTM width of the reward module's trunk.
    #[serde(default = "d::rew_lstm_hidden")]
    pub rew_lstm_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_dim: d::latent_dim(),
            dyn_lstm_hidden: d::dyn_lstm_hidden(),
            enc_hidden: d::enc_hidden(),
            inv_hidden: d::inv_hidden(),
            rew_lstm_hidden: d::rew_lstm_hidden(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default = "d::epochs")]
    pub epochs: usize,
    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::pre_lr")]
    pub lr: f64,
    #[serde(default = "d::lambda_dec")]
    pub lambda_dec: f64,
    #[serde(default = "d::lambda_inv")]
    pub lambda_inv: f64,
    #[serde(default = "d::lambda_for_start")]
    pub lambda_for_start: f64,
    #[serde(default = "d::lambda_for_end")]
    pub lambda_for_end: f64,
    /// Random-policy trajectories collected for training.
    #[serde(default = "d::trajectories")]
    pub trajectories: usize,
    #[serde(default = "d::traj_len")]
    pub traj_len: usize,
    /// Separately collected trajectories for the held-out probes.
    #[serde(default = "d::held_out")]
    pub held_out: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            epochs: d::epochs(),
            batch_size: d::batch_size(),
            lr: d::pre_lr(),
            lambda_dec: d::lambda_dec(),
            lambda_inv: d::lambda_inv(),
            lambda_for_start: d::lambda_for_start(),
            lambda_for_end: d::lambda_for_end(),
            trajectories: d::trajectories(),
            traj_len: d::traj_len(),
            held_out: d::held_out(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    #[serde(default = "d::rew_lr")]
    pub lr: f64,
    #[serde(default = "d::workers")]
    pub workers: usize,
    #[serde(default = "d::episode_budget")]
    pub episode_budget: u64,
    #[serde(default = "d::t_max")]
    pub t_max: usize,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::beta")]
    pub beta: f64,
    #[serde(default = "d::lambda_critic")]
    pub lambda_critic: f64,
    #[serde(default = "d::clip_norm")]
    pub clip_norm: f64,
    /// Optional early stop on the rolling-100 mean return.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_return: Option<f64>,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            lr: d::rew_lr(),
            workers: d::workers(),
            episode_budget: d::episode_budget(),
            t_max: d::t_max(),
            gamma: d::gamma(),
            beta: d::beta(),
            lambda_critic: d::lambda_critic(),
            clip_norm: d::clip_norm(),
            stop_return: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSection {
    /// Stop the reward gradients at the encoder boundary (the shipped
    /// default); turning this off lets reward training move the encoder.
    #[serde(default = "d::cut")]
    pub cut_reward_to_encoder: bool,
    #[serde(default = "d::lambda_dec")]
    pub lambda_dec: f64,
    #[serde(default = "d::lambda_inv")]
    pub lambda_inv: f64,
    #[serde(default = "d::lambda_for_start")]
    pub lambda_for_start: f64,
    #[serde(default = "d::lambda_for_end")]
    pub lambda_for_end: f64,
}

impl Default for JointSection {
    fn default() -> Self {
        let s = JointSchedule::paper();
        JointSection {
            cut_reward_to_encoder: d::cut(),
            lambda_dec: s.lambda_dec,
            lambda_inv: s.lambda_inv,
            lambda_for_start: s.lambda_for_start,
            lambda_for_end: s.lambda_for_end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    /// Search depth for plan-eval; 0 keeps actions on the sampled policy.
    #[serde(default = "d::depth")]
    pub depth: usize,
    #[serde(default = "d::max_depth")]
    pub max_depth: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection { depth: d::depth(), max_depth: d::max_depth() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsSection {
    /// Pretrained dynamics checkpoint consumed by reward/transfer/plan-eval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics_checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default = "d::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "d::out_dir")]
    pub out_dir: String,
    /// Write artifacts even when a cached checkpoint with the same config
    /// hash and seed already exists.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub force: bool,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub reward: RewardSection,
    #[serde(default)]
    pub joint: JointSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub inputs: InputsSection,
}

impl ExperimentConfig {
    /// Fully-specified maze default for a given scenario.
    pub fn maze_default(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            seeds: d::seeds(),
            out_dir: d::out_dir(),
            force: false,
            env: EnvSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            reward: RewardSection::default(),
            joint: JointSection::default(),
            plan: PlanSection::default(),
            inputs: InputsSection::default(),
        }
    }

    /// Fully-specified point-mass default: smaller latent, longer offline
    /// trajectories, desk-scale episode budget (the paper-scale budget is a
    /// CLI flag away).
    pub fn continuous_default(scenario: Scenario) -> Self {
        let pre = DynamicsHyper::cont_paper();
        ExperimentConfig {
            env: EnvSection::continuous_default(),
            model: ModelSection {
                latent_dim: DynamicsModelConfig::cont_default().latent_dim,
                dyn_lstm_hidden: DynamicsModelConfig::cont_default().lstm_hidden,
                enc_hidden: DynamicsModelConfig::cont_default().enc_hidden,
                inv_hidden: DynamicsModelConfig::cont_default().inv_hidden,
                rew_lstm_hidden: RewardModelConfig::cont_default().lstm_hidden,
            },
            pretrain: PretrainSection {
                epochs: pre.epochs,
                batch_size: pre.batch_size,
                trajectories: 5_000,
                traj_len: 20,
                held_out: 500,
                ..PretrainSection::default()
            },
            reward: RewardSection {
                workers: RewardHyper::cont_paper().workers,
                episode_budget: 100_000,
                ..RewardSection::default()
            },
            ..Self::maze_default(scenario)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: "config".into(),
            reason: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization is infallible")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config {
            field: "config".into(),
            reason: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::from_toml(&text)
    }

    /// FNV-1a over the canonical serialized form; stable across runs and
    /// sensitive to every field except `force`, which only controls caching
    /// and must not change a run's identity.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.force = false;
        format!("{:016x}", fnv1a64(c.to_toml().as_bytes()))
    }

    /// Short version tag stamped into records and checkpoints.
    pub fn version(&self) -> String {
        format!("v{}+{}", env!("CARGO_PKG_VERSION"), &self.config_hash()[..8])
    }

    pub fn dynamics_model_config(&self) -> DynamicsModelConfig {
        let m = &self.model;
        match self.env.domain() {
            DomainKind::Maze => DynamicsModelConfig {
                kind: DomainKind::Maze,
                obs_dim: MAZE_OBS_DIM,
                action_dim: 4,
                latent_dim: m.latent_dim,
                lstm_hidden: m.dyn_lstm_hidden,
                enc_hidden: m.enc_hidden,
                inv_hidden: m.inv_hidden,
            },
            DomainKind::Continuous => DynamicsModelConfig {
                kind: DomainKind::Continuous,
                obs_dim: CONT_STATE_DIM,
                action_dim: CONT_ACTION_DIM,
                latent_dim: m.latent_dim,
                lstm_hidden: m.dyn_lstm_hidden,
                enc_hidden: m.enc_hidden,
                inv_hidden: m.inv_hidden,
            },
        }
    }

    pub fn reward_model_config(&self) -> RewardModelConfig {
        RewardModelConfig {
            kind: self.env.domain(),
            latent_dim: self.model.latent_dim,
            lstm_hidden: self.model.rew_lstm_hidden,
            action_dim: match self.env.domain() {
                DomainKind::Maze => 4,
                DomainKind::Continuous => CONT_ACTION_DIM,
            },
        }
    }

    pub fn dynamics_hyper(&self, ablation: Ablation) -> DynamicsHyper {
        let p = &self.pretrain;
        DynamicsHyper {
            epochs: p.epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            lambda_dec: p.lambda_dec,
            lambda_inv: p.lambda_inv,
            lambda_for_start: p.lambda_for_start,
            lambda_for_end: p.lambda_for_end,
            ablation,
        }
    }

    /// Schedule for the transfer re-fit stage: decoder loss off (its whole
    /// gradient path is pinned), forward/inverse weights as configured.
    pub fn refit_hyper(&self) -> DynamicsHyper {
        DynamicsHyper { lambda_dec: 0.0, ..self.dynamics_hyper(Ablation::Full) }
    }

    pub fn reward_hyper(&self) -> RewardHyper {
        let r = &self.reward;
        RewardHyper {
            lambda_critic: r.lambda_critic,
            beta: r.beta,
            gamma: r.gamma,
            t_max: r.t_max,
            workers: r.workers,
            episode_budget: r.episode_budget,
            lr: r.lr,
            clip_norm: r.clip_norm,
            stop_return: r.stop_return,
        }
    }

    pub fn joint_schedule(&self) -> JointSchedule {
        let j = &self.joint;
        JointSchedule {
            lambda_dec: j.lambda_dec,
            lambda_inv: j.lambda_inv,
            lambda_for_start: j.lambda_for_start,
            lambda_for_end: j.lambda_for_end,
        }
    }

    pub fn plan_config(&self) -> PlanConfig {
        if self.scenario == Scenario::PlanEval {
            PlanConfig { depth: self.plan.depth, max_depth: self.plan.max_depth }
        } else {
            PlanConfig::off()
        }
    }

    /// Assemble the training-run spec for one seed.
    pub fn run_spec(&self, seed: u64) -> RunSpec {
        RunSpec {
            kind: self.scenario.run_kind(&self.joint),
            env: self.env.worker_spec(),
            dyn_cfg: self.dynamics_model_config(),
            rew_cfg: self.reward_model_config(),
            hyper: self.reward_hyper(),
            plan: self.plan_config(),
            joint: self.joint_schedule(),
            seed,
        }
    }

    /// Structural checks before any work starts; file-system checks cover
    /// the checkpoint paths consumed by this scenario.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config {
                field: "seeds".into(),
                reason: "at least one seed is required".into(),
            });
        }
        self.env.validate()?;
        for (field, v) in [
            ("model.latent_dim", self.model.latent_dim),
            ("model.dyn_lstm_hidden", self.model.dyn_lstm_hidden),
            ("model.inv_hidden", self.model.inv_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field: field.into(),
                    reason: "must be ≥ 1".into(),
                });
            }
        }
        self.dynamics_hyper(Ablation::Full).validate().map_err(prefix_field("pretrain"))?;
        self.reward_hyper().validate().map_err(prefix_field("reward"))?;
        if self.pretrain.trajectories == 0 || self.pretrain.traj_len == 0 {
            return Err(Error::Config {
                field: "pretrain.trajectories".into(),
                reason: "dataset must be non-empty".into(),
            });
        }
        if self.scenario == Scenario::PlanEval {
            if self.env.domain() != DomainKind::Maze {
                return Err(Error::Config {
                    field: "plan.depth".into(),
                    reason: "tree search needs a discrete action space".into(),
                });
            }
            if self.plan.depth > self.plan.max_depth {
                return Err(Error::Config {
                    field: "plan.depth".into(),
                    reason: format!(
                        "depth {} exceeds max_depth {}",
                        self.plan.depth, self.plan.max_depth
                    ),
                });
            }
        }
        if self.scenario.needs_dynamics_checkpoint() {
            match &self.inputs.dynamics_checkpoint {
                None => {
                    return Err(Error::Config {
                        field: "inputs.dynamics_checkpoint".into(),
                        reason: format!("required by the {} scenario", self.scenario),
                    })
                }
                Some(p) if !Path::new(p).is_file() => {
                    return Err(Error::Config {
                        field: "inputs.dynamics_checkpoint".into(),
                        reason: format!("no such file: {p}"),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

fn prefix_field(section: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config { field, reason } => {
            Error::Config { field: format!("{section}.{field}"), reason }
        }
        other => other,
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
