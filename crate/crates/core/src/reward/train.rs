//! The online training loop shared by every regime: frozen-encoder
//! actor-critic, joint dynamics+reward training, and the end-to-end
//! baseline. Workers own full model replicas (graph tensors are not
//! thread-safe by design), sync from the shared store before each segment,
//! roll up to `t_max` steps, and send gradients back. One worker with a
//! fixed seed is exactly the synchronous algorithm and reproduces its
//! episode log byte for byte.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use crate::dynamics::{
    dynamics_loss, maze_batch, vec_batch, DomainKind, DynamicsModel, DynamicsModelConfig,
    LossWeights, ObsBatch,
};
use crate::env::{
    four_rooms_layout, ContinuousEnvConfig, DiscreteAction, Env, MazeEnv, MazeLayout, MazeObs,
    MazeTraj, NegateReward, PointMassEnv, VecTraj, CONT_ACTION_DIM, CONT_STATE_DIM,
};
use crate::error::Error;
use crate::nn::OptimizerKind;
use crate::planner::{plan_action, PlanConfig};
use crate::rng::{stream, Rng, Stream};
use crate::tensor::{no_grad, Real, Tensor};
use crate::Result;

use super::store::ParamStore;
use super::{
    actor_critic_loss, sample_categorical, sample_standard_normals, RewardHyper, RewardModel,
    RewardModelConfig, Segment,
};

/// Named parameter values in registration order — the checkpoint currency.
pub type NamedTensors<T> = Vec<(String, (usize, usize), Vec<T>)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunKind {
    /// Dynamics parameters stay fixed; only the actor-critic head trains.
    Frozen,
    /// Dynamics and reward losses both fire every segment; the flag decides
    /// whether reward-loss gradients may reach the encoder (default: no,
    /// the stop-gradient is honored).
    Joint { cut_reward_to_encoder: bool },
    /// Same trunk trained end-to-end with only the actor-critic loss.
    Baseline,
}

impl RunKind {
    /// Whether the reward head consumes a detached latent.
    fn detaches_latent(self) -> bool {
        match self {
            RunKind::Frozen => true,
            RunKind::Joint { cut_reward_to_encoder } => cut_reward_to_encoder,
            RunKind::Baseline => false,
        }
    }

    /// Which parameters live in the shared store (everything else is
    /// read-only worker state).
    fn trains(self, name: &str) -> bool {
        let reward_side = name.starts_with("rew.");
        match self {
            RunKind::Frozen => reward_side,
            RunKind::Joint { .. } => true,
            RunKind::Baseline => reward_side || name.starts_with("enc."),
        }
    }
}

/// Loss weights for the dynamics side of a joint run. The forward weight
/// anneals linearly over the episode budget, mirroring the per-epoch ramp
/// of offline training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSchedule {
    pub lambda_dec: f64,
    pub lambda_inv: f64,
    pub lambda_for_start: f64,
    pub lambda_for_end: f64,
}

impl JointSchedule {
    pub fn paper() -> Self {
        JointSchedule { lambda_dec: 100.0, lambda_inv: 10.0, lambda_for_start: 1.0, lambda_for_end: 10.0 }
    }

    /// All-zero weights: the dynamics loss vanishes identically, reducing a
    /// joint run to the baseline when the stop-gradient is also off.
    pub fn zeroed() -> Self {
        JointSchedule { lambda_dec: 0.0, lambda_inv: 0.0, lambda_for_start: 0.0, lambda_for_end: 0.0 }
    }

    pub fn at(&self, frac: f64) -> LossWeights {
        let frac = frac.clamp(0.0, 1.0);
        LossWeights {
            lambda_dec: self.lambda_dec,
            lambda_for: self.lambda_for_start + (self.lambda_for_end - self.lambda_for_start) * frac,
            lambda_inv: self.lambda_inv,
            state_term: true,
        }
    }
}

/// Environment choice as plain data, so run specs can cross threads and be
/// written to config files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkerEnvSpec {
    Maze { slip: f64, negate: bool },
    Continuous(ContinuousEnvConfig),
}

impl WorkerEnvSpec {
    pub fn kind(&self) -> DomainKind {
        match self {
            WorkerEnvSpec::Maze { .. } => DomainKind::Maze,
            WorkerEnvSpec::Continuous(_) => DomainKind::Continuous,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kind: RunKind,
    pub env: WorkerEnvSpec,
    pub dyn_cfg: DynamicsModelConfig,
    pub rew_cfg: RewardModelConfig,
    pub hyper: RewardHyper,
    pub plan: PlanConfig,
    pub joint: JointSchedule,
    pub seed: u64,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let kind = self.env.kind();
        if self.dyn_cfg.kind != kind || self.rew_cfg.kind != kind {
            return Err(Error::Config {
                field: "env".into(),
                reason: "environment, dynamics, and reward configs disagree on the domain".into(),
            });
        }
        if self.rew_cfg.latent_dim != self.dyn_cfg.latent_dim {
            return Err(Error::Config {
                field: "latent_dim".into(),
                reason: format!(
                    "reward head reads {} but encoder emits {}",
                    self.rew_cfg.latent_dim, self.dyn_cfg.latent_dim
                ),
            });
        }
        if self.rew_cfg.action_dim != self.dyn_cfg.action_dim {
            return Err(Error::Config {
                field: "action_dim".into(),
                reason: "dynamics and reward configs disagree on the action arity".into(),
            });
        }
        if self.plan.enabled() {
            if kind != DomainKind::Maze {
                return Err(Error::Config {
                    field: "plan.depth".into(),
                    reason: "planning needs a discrete action space".into(),
                });
            }
            if self.plan.depth > self.plan.max_depth {
                return Err(Error::PlanDepthExceeded {
                    depth: self.plan.depth,
                    max_depth: self.plan.max_depth,
                });
            }
        }
        Ok(())
    }
}

/// One finished episode in the shared log. `plan_depth` is populated only
/// for planning runs (depth ≥ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub global_episode: u64,
    pub worker: usize,
    pub steps: u32,
    pub undiscounted_return: f64,
    /// Segment-mean loss components over the episode.
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub plan_depth: Option<u32>,
}

#[derive(Debug)]
pub struct RunOutput<T: Real> {
    pub rows: Vec<EpisodeRow>,
    /// Final trained actor-critic parameters.
    pub reward_params: NamedTensors<T>,
    /// Trained dynamics-side parameters: the full set for joint runs, the
    /// encoder alone for baseline runs, `None` for frozen runs (nothing
    /// changed by contract).
    pub dynamics_params: Option<NamedTensors<T>>,
}

struct Shared<'a, T: Real> {
    spec: &'a RunSpec,
    store: ParamStore<T>,
    rows: Mutex<Vec<EpisodeRow>>,
    /// Mirror of `rows.len()` for cheap reads (anneal fraction, budget).
    episodes: AtomicU64,
    stop: AtomicBool,
    fault: Mutex<Option<Error>>,
}

/// Appends a finished episode under the log lock, assigns its global index,
/// and decides whether the run is over (budget reached or the rolling
/// 100-episode mean return hit the early-stop threshold).
fn finish_episode<T: Real>(shared: &Shared<'_, T>, mut row: EpisodeRow) -> bool {
    let budget = shared.spec.hyper.episode_budget;
    let mut rows = shared.rows.lock().unwrap();
    if rows.len() as u64 >= budget {
        shared.stop.store(true, Ordering::SeqCst);
        return true;
    }
    row.global_episode = rows.len() as u64 + 1;
    rows.push(row);
    shared.episodes.store(rows.len() as u64, Ordering::SeqCst);
    let mut stop = rows.len() as u64 >= budget;
    if let Some(threshold) = shared.spec.hyper.stop_return {
        if rows.len() >= 100 {
            let tail = &rows[rows.len() - 100..];
            let mean = tail.iter().map(|r| r.undiscounted_return).sum::<f64>() / 100.0;
            if mean >= threshold {
                stop = true;
            }
        }
    }
    if stop {
        shared.stop.store(true, Ordering::SeqCst);
    }
    stop
}

enum WorkerEnv {
    Maze(Box<dyn Env<Obs = MazeObs, Action = DiscreteAction>>),
    Cont(PointMassEnv),
}

#[derive(Clone)]
enum WorkerObs {
    Maze(MazeObs),
    Cont(Vec<f32>),
}

impl WorkerEnv {
    fn from_spec(spec: &WorkerEnvSpec) -> WorkerEnv {
        match spec {
            WorkerEnvSpec::Maze { slip, negate } => {
                let env = MazeEnv::new(*slip);
                if *negate {
                    WorkerEnv::Maze(Box::new(NegateReward(env)))
                } else {
                    WorkerEnv::Maze(Box::new(env))
                }
            }
            WorkerEnvSpec::Continuous(cfg) => WorkerEnv::Cont(PointMassEnv::new(*cfg)),
        }
    }

    fn reset(&mut self, rng: &mut Rng) -> WorkerObs {
        match self {
            WorkerEnv::Maze(env) => WorkerObs::Maze(env.reset(rng)),
            WorkerEnv::Cont(env) => WorkerObs::Cont(env.reset(rng)),
        }
    }
}

fn obs_batch<T: Real>(obs: &WorkerObs, layout: &MazeLayout) -> ObsBatch<T> {
    match obs {
        WorkerObs::Maze(o) => {
            ObsBatch::Sparse(std::rc::Rc::new(vec![o.active_features(layout)]))
        }
        WorkerObs::Cont(state) => ObsBatch::Dense(Tensor::new(
            (1, state.len()),
            state.iter().map(|&v| T::from_f64(v as f64)).collect(),
            false,
        )),
    }
}

fn divergence(e: Error, worker: usize, step: u64) -> Error {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGrad { .. } | Error::EnvFault(_) => {
            Error::WorkerDiverged { worker, step, context: e.to_string() }
        }
        other => other,
    }
}

/// Per-segment trajectory recorder feeding the dynamics loss in joint mode.
struct SegmentTrace {
    cells: Vec<u16>,
    goal: u16,
    states: Vec<f32>,
    actions_idx: Vec<u8>,
    actions_vec: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<bool>,
}

impl SegmentTrace {
    fn new() -> Self {
        SegmentTrace {
            cells: Vec::new(),
            goal: 0,
            states: Vec::new(),
            actions_idx: Vec::new(),
            actions_vec: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
        }
    }

    fn record_obs(&mut self, obs: &WorkerObs) {
        match obs {
            WorkerObs::Maze(o) => {
                self.cells.push(o.agent);
                self.goal = o.goal;
            }
            WorkerObs::Cont(state) => self.states.extend_from_slice(state),
        }
    }

    fn dynamics_total<T: Real>(
        &self,
        dynamics: &DynamicsModel<T>,
        layout: &MazeLayout,
        weights: &LossWeights,
    ) -> Result<Tensor<T>> {
        let batch = match dynamics.cfg.kind {
            DomainKind::Maze => {
                let traj = MazeTraj {
                    goal: self.goal,
                    cells: self.cells.clone(),
                    actions: self.actions_idx.clone(),
                    rewards: self.rewards.clone(),
                    dones: self.dones.clone(),
                };
                maze_batch(&[&traj], layout)
            }
            DomainKind::Continuous => {
                let traj = VecTraj {
                    obs_dim: CONT_STATE_DIM,
                    act_dim: CONT_ACTION_DIM,
                    states: self.states.clone(),
                    actions: self.actions_vec.clone(),
                    rewards: self.rewards.clone(),
                    dones: self.dones.clone(),
                };
                vec_batch(&[&traj])
            }
        };
        Ok(dynamics_loss(dynamics, &batch, weights)?.total)
    }
}

fn worker_loop<T: Real>(
    shared: &Shared<'_, T>,
    dyn_init: Option<&HashMap<String, ((usize, usize), Vec<T>)>>,
    wid: usize,
) -> Result<()> {
    let spec = shared.spec;
    let hyper = &spec.hyper;
    let mut rng = stream(spec.seed, Stream::Worker(wid as u64));

    // Local replicas. Init streams are keyed per model (not per worker), so
    // every worker and the store builder draw identical layouts, and a
    // baseline run's encoder matches a joint run's bit for bit.
    let mut init = stream(spec.seed, Stream::Init(0));
    let dynamics = DynamicsModel::new(spec.dyn_cfg, &mut init);
    let mut init = stream(spec.seed, Stream::Init(1));
    let reward = RewardModel::new(spec.rew_cfg, &mut init);
    if let Some(blobs) = dyn_init {
        dynamics.params.load_named(blobs)?;
    }
    // Freeze-contract watchdog: in debug builds, verify on exit that frozen
    // dynamics parameters never moved. Compare bits, not values, so NaN
    // parameters (e.g. a poisoned checkpoint in a divergence test) don't
    // trip the assert on NaN != NaN.
    let param_bits = |params: &crate::nn::ParamSet<T>| -> Vec<Vec<u64>> {
        params
            .snapshot()
            .iter()
            .map(|vals| vals.iter().map(|v| v.to_f64().to_bits()).collect())
            .collect()
    };
    let frozen_watch = if cfg!(debug_assertions) && spec.kind == RunKind::Frozen {
        Some(param_bits(&dynamics.params))
    } else {
        None
    };

    // Local tensors aligned with the store's parameter order.
    let mut handles: Vec<Tensor<T>> = Vec::with_capacity(shared.store.names().len());
    for name in shared.store.names() {
        let tensor = dynamics
            .params
            .get(name)
            .or_else(|| reward.params.get(name))
            .ok_or_else(|| Error::Usage(format!("store parameter '{name}' missing from worker model")))?;
        handles.push(tensor.clone());
    }

    let layout = four_rooms_layout();
    let detach_latent = spec.kind.detaches_latent();
    let joint = matches!(spec.kind, RunKind::Joint { .. });

    let mut env = WorkerEnv::from_spec(&spec.env);
    let mut obs = env.reset(&mut rng);
    let (mut rew_h, mut rew_c) = reward.zero_hidden(1);
    let (mut dyn_h, mut dyn_c) = dynamics.zero_hidden(1);

    let mut ep_return = 0.0f64;
    let mut ep_steps = 0u32;
    let mut ep_actor = 0.0f64;
    let mut ep_critic = 0.0f64;
    let mut ep_entropy = 0.0f64;
    let mut ep_segments = 0usize;
    let mut local_step = 0u64;

    'run: while !shared.stop.load(Ordering::SeqCst) {
        // Segment start: consistent parameter snapshot, fresh gradients,
        // recurrent state cut loose from the previous segment's graph.
        let snapshot = shared.store.snapshot();
        for (handle, values) in handles.iter().zip(&snapshot) {
            handle.set_values(values);
        }
        dynamics.params.zero_grad();
        reward.params.zero_grad();
        rew_h = rew_h.detach();
        rew_c = rew_c.detach();
        dyn_h = dyn_h.detach();
        dyn_c = dyn_c.detach();

        let mut seg: Segment<T> = Segment::new(0.0);
        let mut trace = SegmentTrace::new();
        trace.record_obs(&obs);
        let mut done = false;

        for _ in 0..hyper.t_max {
            let z_full = dynamics
                .encode(&obs_batch(&obs, &layout))
                .map_err(|e| divergence(e, wid, local_step))?;
            let z_rew = if detach_latent { z_full.detach() } else { z_full.clone() };
            let pv = reward
                .policy_value(&z_rew, &rew_h, &rew_c)
                .map_err(|e| divergence(e, wid, local_step))?;

            let (next_obs, r, ep_done) = match &mut env {
                WorkerEnv::Maze(maze) => {
                    let action_idx = if spec.plan.enabled() {
                        plan_action(
                            &dynamics,
                            &reward,
                            &z_full,
                            (&dyn_h, &dyn_c),
                            (&pv.h, &pv.c),
                            &spec.plan,
                        )?
                        .index()
                    } else {
                        sample_categorical(&reward.action_probs(&pv.dist), &mut rng)
                    };
                    let terms = reward.discrete_terms(&pv.dist, action_idx)?;
                    seg.logps.push(terms.logp);
                    seg.entropies.push(terms.entropy);
                    trace.actions_idx.push(action_idx as u8);
                    if spec.plan.enabled() {
                        // Thread the live forward-model hidden along the
                        // real trajectory for the next planning call.
                        let feat = one_hot::<T>(dynamics.cfg.action_dim, action_idx);
                        let (_, h2, c2) = no_grad(|| {
                            dynamics.forward_step(&z_full, &feat, &dyn_h, &dyn_c)
                        })?;
                        dyn_h = h2;
                        dyn_c = c2;
                    }
                    let s = maze
                        .step(&DiscreteAction::from_index(action_idx), &mut rng)
                        .map_err(|e| divergence(e, wid, local_step))?;
                    (WorkerObs::Maze(s.obs), s.reward, s.done)
                }
                WorkerEnv::Cont(point) => {
                    let mean = pv.dist.value_vec();
                    let sigma: Vec<f64> = reward
                        .log_std_clamped()?
                        .value_vec()
                        .iter()
                        .map(|v| v.to_f64().exp())
                        .collect();
                    let noise = sample_standard_normals(mean.len(), &mut rng);
                    let raw: Vec<f64> = (0..mean.len())
                        .map(|j| mean[j].to_f64() + sigma[j] * noise[j])
                        .collect();
                    let terms = reward.gaussian_terms(&pv.dist, &raw)?;
                    seg.logps.push(terms.logp);
                    seg.entropies.push(terms.entropy);
                    // The environment sees the tanh-squashed action; the
                    // log-density above is of the pre-squash sample.
                    let action = [raw[0].tanh(), raw[1].tanh()];
                    trace.actions_vec.extend(action.iter().map(|&v| v as f32));
                    let s = point
                        .step(&action, &mut rng)
                        .map_err(|e| divergence(e, wid, local_step))?;
                    (WorkerObs::Cont(s.obs), s.reward, s.done)
                }
            };

            seg.values.push(pv.value);
            seg.rewards.push(r);
            trace.rewards.push(r as f32);
            trace.dones.push(ep_done);
            rew_h = pv.h;
            rew_c = pv.c;
            obs = next_obs;
            trace.record_obs(&obs);
            ep_return += r;
            ep_steps += 1;
            local_step += 1;
            done = ep_done;
            if done {
                break;
            }
        }

        seg.bootstrap = if done {
            0.0
        } else {
            no_grad(|| -> Result<f64> {
                let z = dynamics.encode(&obs_batch(&obs, &layout))?;
                let pv = reward.policy_value(&z, &rew_h, &rew_c)?;
                Ok(pv.value.scalar_value().to_f64())
            })
            .map_err(|e| divergence(e, wid, local_step))?
        };

        let (reward_total, parts) =
            actor_critic_loss(&seg, hyper).map_err(|e| divergence(e, wid, local_step))?;
        let total = if joint {
            let frac =
                shared.episodes.load(Ordering::SeqCst) as f64 / hyper.episode_budget.max(1) as f64;
            let weights = spec.joint.at(frac);
            let dyn_total = trace
                .dynamics_total(&dynamics, &layout, &weights)
                .map_err(|e| divergence(e, wid, local_step))?;
            reward_total.add(&dyn_total)?
        } else {
            reward_total
        };
        total.backward().map_err(|e| divergence(e, wid, local_step))?;

        let mut grads: Vec<Option<Vec<T>>> = handles.iter().map(|h| h.grad()).collect();
        shared
            .store
            .apply(&mut grads, hyper.clip_norm)
            .map_err(|e| divergence(e, wid, local_step))?;

        ep_actor += parts.actor;
        ep_critic += parts.critic;
        ep_entropy += parts.entropy;
        ep_segments += 1;

        if done {
            let n = ep_segments as f64;
            let stop = finish_episode(
                shared,
                EpisodeRow {
                    global_episode: 0, // assigned under the log lock
                    worker: wid,
                    steps: ep_steps,
                    undiscounted_return: ep_return,
                    actor_loss: ep_actor / n,
                    critic_loss: ep_critic / n,
                    entropy: ep_entropy / n,
                    plan_depth: if spec.plan.enabled() { Some(spec.plan.depth as u32) } else { None },
                },
            );
            ep_return = 0.0;
            ep_steps = 0;
            ep_actor = 0.0;
            ep_critic = 0.0;
            ep_entropy = 0.0;
            ep_segments = 0;
            obs = env.reset(&mut rng);
            let (h, c) = reward.zero_hidden(1);
            rew_h = h;
            rew_c = c;
            let (h, c) = dynamics.zero_hidden(1);
            dyn_h = h;
            dyn_c = c;
            if stop {
                break 'run;
            }
        }
    }

    if let Some(before) = frozen_watch {
        assert_eq!(
            param_bits(&dynamics.params),
            before,
            "frozen dynamics parameters moved during training"
        );
    }
    Ok(())
}

fn one_hot<T: Real>(arity: usize, index: usize) -> Tensor<T> {
    let mut flat = vec![T::ZERO; arity];
    flat[index] = T::ONE;
    Tensor::new((1, arity), flat, false)
}

/// Runs one training job to completion and returns the episode log plus the
/// trained parameters. `dynamics_init` supplies pretrained dynamics values;
/// frozen runs require it, joint runs may warm-start from it.
pub fn train_run<T: Real>(
    spec: &RunSpec,
    dynamics_init: Option<&NamedTensors<T>>,
) -> Result<RunOutput<T>> {
    spec.validate()?;
    if spec.kind == RunKind::Frozen && dynamics_init.is_none() {
        return Err(Error::Usage(
            "frozen-encoder training requires pretrained dynamics parameters".into(),
        ));
    }
    let blob_map: Option<HashMap<String, ((usize, usize), Vec<T>)>> = dynamics_init
        .map(|list| list.iter().map(|(n, s, v)| (n.clone(), (*s, v.clone()))).collect());

    // Canonical initial values for the store, drawn from the same streams
    // the workers use.
    let entries = {
        let mut init = stream(spec.seed, Stream::Init(0));
        let dynamics = DynamicsModel::<T>::new(spec.dyn_cfg, &mut init);
        let mut init = stream(spec.seed, Stream::Init(1));
        let reward = RewardModel::<T>::new(spec.rew_cfg, &mut init);
        if let Some(map) = &blob_map {
            dynamics.params.load_named(map)?;
        }
        let mut entries: NamedTensors<T> = Vec::new();
        for (name, t) in dynamics.params.iter() {
            if spec.kind.trains(name) {
                entries.push((name.to_string(), t.shape(), t.value_vec()));
            }
        }
        for (name, t) in reward.params.iter() {
            entries.push((name.to_string(), t.shape(), t.value_vec()));
        }
        entries
    };

    let shared = Shared {
        spec,
        store: ParamStore::new(entries, OptimizerKind::adam(), spec.hyper.lr),
        rows: Mutex::new(Vec::new()),
        episodes: AtomicU64::new(0),
        stop: AtomicBool::new(false),
        fault: Mutex::new(None),
    };

    if spec.hyper.workers == 1 {
        worker_loop(&shared, blob_map.as_ref(), 0)?;
    } else {
        std::thread::scope(|scope| {
            for wid in 0..spec.hyper.workers {
                let shared = &shared;
                let blobs = blob_map.as_ref();
                scope.spawn(move || {
                    if let Err(e) = worker_loop(shared, blobs, wid) {
                        let mut fault = shared.fault.lock().unwrap();
                        if fault.is_none() {
                            *fault = Some(e);
                        }
                        shared.stop.store(true, Ordering::SeqCst);
                    }
                });
            }
        });
        if let Some(e) = shared.fault.lock().unwrap().take() {
            return Err(e);
        }
    }

    let rows = std::mem::take(&mut *shared.rows.lock().unwrap());
    let exported = shared.store.export();
    let reward_params: NamedTensors<T> =
        exported.iter().filter(|(n, ..)| n.starts_with("rew.")).cloned().collect();
    let dynamics_params = match spec.kind {
        RunKind::Frozen => None,
        _ => Some(
            exported.into_iter().filter(|(n, ..)| !n.starts_with("rew.")).collect::<Vec<_>>(),
        ),
    };
    Ok(RunOutput { rows, reward_params, dynamics_params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::MAZE_OBS_DIM;

    fn cont_spec(kind: RunKind, budget: u64, workers: usize, seed: u64) -> RunSpec {
        RunSpec {
            kind,
            env: WorkerEnvSpec::Continuous(ContinuousEnvConfig {
                episode_cap: 6,
                ..Default::default()
            }),
            dyn_cfg: DynamicsModelConfig::cont_tiny(6),
            rew_cfg: RewardModelConfig::cont_tiny(6),
            hyper: RewardHyper {
                workers,
                episode_budget: budget,
                t_max: 5,
                ..RewardHyper::cont_paper()
            },
            plan: PlanConfig::off(),
            joint: JointSchedule::zeroed(),
            seed,
        }
    }

    fn maze_spec(kind: RunKind, budget: u64, seed: u64) -> RunSpec {
        RunSpec {
            kind,
            env: WorkerEnvSpec::Maze { slip: 0.0, negate: false },
            dyn_cfg: DynamicsModelConfig::maze_tiny(MAZE_OBS_DIM, 8),
            rew_cfg: RewardModelConfig::maze_tiny(8),
            hyper: RewardHyper {
                workers: 1,
                episode_budget: budget,
                ..RewardHyper::maze_paper()
            },
            plan: PlanConfig::off(),
            joint: JointSchedule::zeroed(),
            seed,
        }
    }

    fn pretrained_dynamics(cfg: DynamicsModelConfig, seed: u64) -> NamedTensors<f64> {
        let mut rng = stream(seed, Stream::Init(0));
        DynamicsModel::<f64>::new(cfg, &mut rng).params.named_values()
    }

    #[test]
    fn frozen_runs_train_only_the_reward_head() {
        let spec = cont_spec(RunKind::Frozen, 4, 1, 11);
        let init = pretrained_dynamics(spec.dyn_cfg, 99);
        let out = train_run::<f64>(&spec, Some(&init)).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.dynamics_params.is_none());
        assert!(!out.reward_params.is_empty());
        assert!(out.reward_params.iter().all(|(n, ..)| n.starts_with("rew.")));
        for (i, row) in out.rows.iter().enumerate() {
            assert_eq!(row.global_episode, i as u64 + 1);
            assert_eq!(row.steps, 6, "continuous episodes end at the cap");
            assert_eq!(row.plan_depth, None);
            assert!(row.undiscounted_return.is_finite());
        }
    }

    #[test]
    fn single_worker_runs_replay_byte_for_byte() {
        let spec = cont_spec(RunKind::Frozen, 5, 1, 21);
        let init = pretrained_dynamics(spec.dyn_cfg, 50);
        let a = train_run::<f64>(&spec, Some(&init)).unwrap();
        let b = train_run::<f64>(&spec, Some(&init)).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.reward_params, b.reward_params);

        let c = train_run::<f64>(&cont_spec(RunKind::Frozen, 5, 1, 22), Some(&init)).unwrap();
        assert_ne!(a.rows, c.rows, "different seeds must explore differently");
    }

    #[test]
    fn episode_budget_is_shared_and_never_exceeded() {
        let spec = cont_spec(RunKind::Baseline, 12, 4, 33);
        let out = train_run::<f64>(&spec, None).unwrap();
        assert_eq!(out.rows.len(), 12);
        for (i, row) in out.rows.iter().enumerate() {
            assert_eq!(row.global_episode, i as u64 + 1, "ids must be dense and 1-based");
            assert!(row.worker < 4);
        }
    }

    #[test]
    fn joint_training_moves_the_full_dynamics_stack() {
        let mut spec = cont_spec(RunKind::Joint { cut_reward_to_encoder: true }, 4, 1, 44);
        spec.joint = JointSchedule::paper();
        let out = train_run::<f64>(&spec, None).unwrap();
        let trained = out.dynamics_params.unwrap();
        for prefix in ["enc.", "dec.", "for.", "inv."] {
            assert!(trained.iter().any(|(n, ..)| n.starts_with(prefix)), "missing {prefix}*");
        }
        let init = pretrained_dynamics(spec.dyn_cfg, 44);
        let init_enc: Vec<_> = init.iter().filter(|(n, ..)| n.starts_with("enc.")).collect();
        let trained_enc: Vec<_> = trained.iter().filter(|(n, ..)| n.starts_with("enc.")).collect();
        assert_ne!(init_enc, trained_enc, "the encoder should move under the joint loss");
    }

    #[test]
    fn zero_weights_leave_the_unused_dynamics_parameters_untouched() {
        // Reward gradients may reach the encoder when the cut is off, but the
        // decoder/forward/inverse parameters sit outside every live loss term
        // and must stay at their initial bits.
        let spec = cont_spec(RunKind::Joint { cut_reward_to_encoder: false }, 4, 1, 88);
        let out = train_run::<f64>(&spec, None).unwrap();
        let init = pretrained_dynamics(spec.dyn_cfg, 88);
        let init_of = |name: &str| {
            init.iter().find(|(n, ..)| n == name).map(|(_, _, v)| v.clone()).unwrap()
        };
        let mut encoder_moved = false;
        for (name, _, vals) in out.dynamics_params.unwrap() {
            if name.starts_with("enc.") {
                encoder_moved |= vals != init_of(&name);
            } else {
                assert_eq!(vals, init_of(&name), "{name} must not move under zero weights");
            }
        }
        assert!(encoder_moved, "reward gradients should reach the uncut encoder");

        // With the stop-gradient honored, the encoder is untouched too.
        let spec = cont_spec(RunKind::Joint { cut_reward_to_encoder: true }, 4, 1, 88);
        let out = train_run::<f64>(&spec, None).unwrap();
        for (name, _, vals) in out.dynamics_params.unwrap() {
            assert_eq!(vals, init_of(&name), "{name} must not move behind the stop-gradient");
        }
    }

    #[test]
    fn reward_only_joint_matches_the_baseline_exactly() {
        // A joint run whose dynamics weights are all zero and whose
        // stop-gradient is off optimizes the same objective over the same
        // parameters as the end-to-end baseline; with a shared seed the two
        // must produce bit-identical logs and parameters.
        let joint =
            train_run::<f64>(&cont_spec(RunKind::Joint { cut_reward_to_encoder: false }, 6, 1, 77), None)
                .unwrap();
        let base = train_run::<f64>(&cont_spec(RunKind::Baseline, 6, 1, 77), None).unwrap();
        assert_eq!(joint.rows, base.rows);
        assert_eq!(joint.reward_params, base.reward_params);
        let joint_enc: Vec<_> = joint
            .dynamics_params
            .unwrap()
            .into_iter()
            .filter(|(n, ..)| n.starts_with("enc."))
            .collect();
        assert_eq!(joint_enc, base.dynamics_params.unwrap());
    }

    #[test]
    fn stop_return_halts_at_the_hundred_episode_window() {
        let mut spec = cont_spec(RunKind::Baseline, 150, 1, 55);
        spec.hyper.stop_return = Some(-1e9); // any rolling mean qualifies
        let out = train_run::<f64>(&spec, None).unwrap();
        assert_eq!(out.rows.len(), 100, "the window needs 100 episodes before it can trigger");
    }

    #[test]
    fn poisoned_dynamics_surface_as_worker_divergence() {
        let spec = cont_spec(RunKind::Frozen, 4, 1, 66);
        let mut init = pretrained_dynamics(spec.dyn_cfg, 66);
        for (name, _, vals) in &mut init {
            if name == "enc.l2.b" {
                vals.fill(f64::NAN);
            }
        }
        let err = train_run::<f64>(&spec, Some(&init)).unwrap_err();
        assert!(matches!(err, Error::WorkerDiverged { worker: 0, .. }), "got {err:?}");

        let mut spec = cont_spec(RunKind::Frozen, 4, 2, 66);
        spec.hyper.workers = 2;
        let err = train_run::<f64>(&spec, Some(&init)).unwrap_err();
        assert!(matches!(err, Error::WorkerDiverged { .. }), "got {err:?}");
    }

    #[test]
    fn frozen_training_requires_dynamics_values() {
        let err = train_run::<f64>(&cont_spec(RunKind::Frozen, 2, 1, 5), None).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "got {err:?}");
    }

    #[test]
    fn run_spec_validation_catches_mismatches() {
        let base = cont_spec(RunKind::Baseline, 2, 1, 1);

        let mut s = base.clone();
        s.env = WorkerEnvSpec::Maze { slip: 0.0, negate: false };
        assert!(matches!(train_run::<f64>(&s, None).unwrap_err(), Error::Config { .. }));

        let mut s = base.clone();
        s.rew_cfg = RewardModelConfig::cont_tiny(5);
        assert!(matches!(train_run::<f64>(&s, None).unwrap_err(), Error::Config { .. }));

        let mut s = base.clone();
        s.plan = PlanConfig::depth(2);
        assert!(
            matches!(train_run::<f64>(&s, None).unwrap_err(), Error::Config { .. }),
            "planning needs a discrete action space"
        );

        let mut s = maze_spec(RunKind::Frozen, 2, 1);
        s.plan = PlanConfig { depth: 9, max_depth: 5 };
        assert!(matches!(
            train_run::<f64>(&s, None).unwrap_err(),
            Error::PlanDepthExceeded { .. }
        ));
    }

    #[test]
    fn maze_workers_run_both_with_and_without_planning() {
        let spec = maze_spec(RunKind::Frozen, 2, 9);
        let init = pretrained_dynamics(spec.dyn_cfg, 9);
        let out = train_run::<f64>(&spec, Some(&init)).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.plan_depth.is_none()));

        let mut spec = maze_spec(RunKind::Frozen, 1, 9);
        spec.plan = PlanConfig::depth(1);
        let out = train_run::<f64>(&spec, Some(&init)).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].plan_depth, Some(1));
    }

    #[test]
    fn joint_maze_smoke_trains_through_the_trajectory_loss() {
        let mut spec = maze_spec(RunKind::Joint { cut_reward_to_encoder: true }, 1, 13);
        spec.joint = JointSchedule::paper();
        let out = train_run::<f64>(&spec, None).unwrap();
        assert_eq!(out.rows.len(), 1);
        let trained = out.dynamics_params.unwrap();
        let init = pretrained_dynamics(spec.dyn_cfg, 13);
        assert_ne!(trained, init, "every loss term fires, so the stack should move");
    }
}
