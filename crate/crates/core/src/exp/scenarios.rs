//! Scenario orchestration. One config plus one seed expands into a run
//! directory of artifacts — checkpoints, CSV logs, the expanded config, and
//! a record file — with caching: a directory whose record matches the
//! config hash and seed is returned as-is, so finished work is never
//! repeated unless `force` asks for it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use crate::dynamics::{
    decoder_agent_accuracy, distinct_latent_gap, forward_next_cell_accuracy, inverse_accuracy,
    inverse_mse, train_dynamics, train_dynamics_masked, Ablation, DomainKind, DynamicsModel,
    ObsBatch,
};
use crate::env::{
    collect_offline_cont, collect_offline_maze, four_rooms_layout, uniform_cont_policy,
    uniform_maze_policy, DatasetPayload, DiscreteAction, Env, MazeEnv, MazeObs, NegateReward,
    OfflineDataset, PointMassEnv,
};
use crate::error::Error;
use crate::exp::checkpoint::{blob_map, load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::exp::config::{EnvSection, ExperimentConfig, Scenario};
use crate::exp::metrics::{
    final_window_mean, write_episode_csv, write_loss_csv, write_text, RunRecord,
};
use crate::reward::{train_run, NamedTensors, RewardModel};
use crate::rng::{stream, Stream};
use crate::tensor::{no_grad, Tensor};
use crate::Result;

/// Key under which every reward-training record stores its headline number.
pub const METRIC_FINAL_RETURN: &str = "final_mean_return_100";

/// Distinct collection streams per run seed: the held-out probe set and the
/// transfer re-fit set must not replay the training set's episodes.
const HELD_OUT_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;
const REFIT_SEED_OFFSET: u64 = 0x517C_C1B7_2722_0A95;

/// Where one (scenario, seed) run keeps its artifacts.
pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    Path::new(&cfg.out_dir).join(cfg.scenario.tag()).join(format!("seed{seed}"))
}

/// Run the configured scenario for every seed in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.seeds.iter().map(|&seed| run_scenario(cfg, seed)).collect()
}

/// Run one seed of the configured scenario and return its record.
pub fn run_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let dir = seed_dir(cfg, seed);
    match cfg.scenario {
        Scenario::Pretrain => pretrain_at(cfg, seed, Ablation::Full, &dir),
        Scenario::AblateNof | Scenario::AblateNoi | Scenario::AblateAe => {
            // One pretraining per arm, shared by all reward seeds: the arm's
            // world model is trained once at the base seed and cached.
            let ablation = cfg.scenario.pretrain_ablation().expect("ablate arms define one");
            let base = cfg.seeds[0];
            let pre_dir = Path::new(&cfg.out_dir)
                .join(cfg.scenario.tag())
                .join(format!("pretrain-seed{base}"));
            pretrain_at(cfg, base, ablation, &pre_dir)?;
            reward_run(cfg, seed, Some(&pre_dir.join("dynamics.ckpt")), &dir)
        }
        _ => {
            let ckpt = cfg.inputs.dynamics_checkpoint.as_ref().map(PathBuf::from);
            reward_run(cfg, seed, ckpt.as_deref(), &dir)
        }
    }
}

/// A record in `dir` that matches this config and seed, with all required
/// artifacts still on disk. `force` disables the cache.
fn cached(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    required: &[PathBuf],
) -> Option<RunRecord> {
    if cfg.force {
        return None;
    }
    let rec = RunRecord::load(dir.join("record.toml")).ok()?;
    let fresh = rec.seed == seed
        && rec.config_hash == cfg.config_hash()
        && required.iter().all(|p| p.is_file());
    fresh.then_some(rec)
}

fn domain_tag(kind: DomainKind) -> &'static str {
    match kind {
        DomainKind::Maze => "maze",
        DomainKind::Continuous => "continuous",
    }
}

fn ckpt_meta(cfg: &ExperimentConfig, module: &str, seed: u64) -> CheckpointMeta {
    CheckpointMeta {
        module: module.into(),
        domain: domain_tag(cfg.env.domain()).into(),
        latent_dim: cfg.model.latent_dim,
        lstm_hidden: if module == "reward" {
            cfg.model.rew_lstm_hidden
        } else {
            cfg.model.dyn_lstm_hidden
        },
        seed,
        config_hash: cfg.config_hash(),
        version: cfg.version(),
    }
}

/// Roll the configured environment under the uniform random policy.
/// Dynamics training ignores rewards, so the maze `negate` flag and the
/// continuous `reward_sign` have no effect here.
fn collect_dataset(cfg: &ExperimentConfig, n_traj: usize, seed: u64) -> Result<OfflineDataset> {
    match &cfg.env {
        EnvSection::Maze { slip, .. } => {
            let mut env = MazeEnv::new(*slip);
            collect_offline_maze(
                &mut env,
                uniform_maze_policy,
                "uniform-random",
                n_traj,
                cfg.pretrain.traj_len,
                seed,
            )
        }
        EnvSection::Continuous { .. } => {
            let mut env = PointMassEnv::new(cfg.env.continuous_config());
            collect_offline_cont(
                &mut env,
                uniform_cont_policy,
                "uniform-random",
                n_traj,
                cfg.pretrain.traj_len,
                seed,
            )
        }
    }
}

/// Held-out probe numbers for a trained world model.
fn pretrain_probes(
    seed: u64,
    model: &DynamicsModel<f32>,
    held: &OfflineDataset,
    metrics: &mut BTreeMap<String, f64>,
) {
    match &held.payload {
        DatasetPayload::Maze(trajs) => {
            let layout = four_rooms_layout();
            metrics.insert("decoder_accuracy".into(), decoder_agent_accuracy(model, trajs, &layout));
            metrics.insert("inverse_accuracy".into(), inverse_accuracy(model, trajs, &layout));
            metrics
                .insert("forward_accuracy".into(), forward_next_cell_accuracy(model, trajs, &layout));
            metrics.insert("latent_gap".into(), distinct_latent_gap(model, &layout, 500, seed));
        }
        DatasetPayload::Vector(trajs) => {
            metrics.insert("inverse_mse".into(), inverse_mse(model, trajs));
        }
    }
}

/// Offline world-model training stage: collect, fit, probe, checkpoint.
fn pretrain_at(
    cfg: &ExperimentConfig,
    seed: u64,
    ablation: Ablation,
    dir: &Path,
) -> Result<RunRecord> {
    let ckpt_path = dir.join("dynamics.ckpt");
    if let Some(rec) = cached(cfg, seed, dir, &[ckpt_path.clone()]) {
        eprintln!("[{}] seed {seed}: cached, skipping pretraining", cfg.scenario);
        return Ok(rec);
    }
    let t0 = Instant::now();
    eprintln!(
        "[{}] seed {seed}: collecting {} + {} trajectories of length {}",
        cfg.scenario, cfg.pretrain.trajectories, cfg.pretrain.held_out, cfg.pretrain.traj_len
    );
    let train = collect_dataset(cfg, cfg.pretrain.trajectories, seed)?;
    let held =
        collect_dataset(cfg, cfg.pretrain.held_out, seed.wrapping_add(HELD_OUT_SEED_OFFSET))?;

    let model: DynamicsModel<f32> =
        DynamicsModel::new(cfg.dynamics_model_config(), &mut stream(seed, Stream::Init(0)));
    let hyper = cfg.dynamics_hyper(ablation);
    let every = (hyper.epochs / 10).max(1);
    let scenario = cfg.scenario;
    let losses = train_dynamics(&model, &train, &hyper, seed, |e, p| {
        if e % every == 0 || e + 1 == hyper.epochs {
            eprintln!(
                "[{scenario}] seed {seed}: epoch {e}/{}: total {:.4} recon {:.5} state {:.5} for {:.5} inv {:.5}",
                hyper.epochs, p.total, p.recon, p.state, p.forward, p.inverse
            );
        }
    })?;
    write_loss_csv(dir.join("losses.csv"), &losses)?;

    let mut metrics = BTreeMap::new();
    metrics.insert("final_total_loss".into(), losses.last().expect("epochs ≥ 1").total);
    pretrain_probes(seed, &model, &held, &mut metrics);
    save_checkpoint(&ckpt_path, &ckpt_meta(cfg, "dynamics", seed), &model.params.named_values())?;

    let record = RunRecord {
        scenario: cfg.scenario.tag().into(),
        seed,
        config_hash: cfg.config_hash(),
        version: cfg.version(),
        wall_clock_s: t0.elapsed().as_secs_f64(),
        metrics,
    };
    record.save(dir.join("record.toml"))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    eprintln!("[{}] seed {seed}: done in {:.1}s -> {}", cfg.scenario, record.wall_clock_s, dir.display());
    Ok(record)
}

/// Online training stage shared by every scenario that produces an episode
/// log; transfer scenarios run their offline re-fit first.
fn reward_run(
    cfg: &ExperimentConfig,
    seed: u64,
    ckpt: Option<&Path>,
    dir: &Path,
) -> Result<RunRecord> {
    let with_depth = cfg.scenario == Scenario::PlanEval && cfg.plan.depth >= 1;
    let writes_dynamics = cfg.scenario.refits_dynamics()
        || matches!(cfg.scenario, Scenario::Joint | Scenario::Baseline);
    let mut required = vec![dir.join("episodes.csv"), dir.join("reward.ckpt")];
    if writes_dynamics {
        required.push(dir.join("dynamics.ckpt"));
    }
    if let Some(rec) = cached(cfg, seed, dir, &required) {
        eprintln!("[{}] seed {seed}: cached, skipping training", cfg.scenario);
        return Ok(rec);
    }
    let t0 = Instant::now();
    let mut metrics = BTreeMap::new();

    let mut init: Option<NamedTensors<f32>> = None;
    if let Some(path) = ckpt {
        let (meta, params) = load_checkpoint(path)?;
        if meta.module != "dynamics" {
            return Err(Error::Checkpoint(format!(
                "{}: expected a dynamics checkpoint, found module '{}'",
                path.display(),
                meta.module
            )));
        }
        if meta.domain != domain_tag(cfg.env.domain()) {
            return Err(Error::Checkpoint(format!(
                "{}: domain '{}' does not match the configured '{}' environment",
                path.display(),
                meta.domain,
                domain_tag(cfg.env.domain())
            )));
        }
        init = Some(params);
    }

    // Transfer re-fit: the encoder and decoder stay bit-identical while the
    // forward and inverse models adapt offline to the configured
    // environment's changed dynamics.
    if cfg.scenario.refits_dynamics() {
        let source = init.take().expect("validated: transfer scenarios carry a checkpoint");
        let model: DynamicsModel<f32> =
            DynamicsModel::new(cfg.dynamics_model_config(), &mut stream(seed, Stream::Init(0)));
        model.params.load_named(&blob_map(source))?;
        eprintln!(
            "[{}] seed {seed}: re-fitting forward/inverse on {} trajectories",
            cfg.scenario, cfg.pretrain.trajectories
        );
        let data =
            collect_dataset(cfg, cfg.pretrain.trajectories, seed.wrapping_add(REFIT_SEED_OFFSET))?;
        let hyper = cfg.refit_hyper();
        let losses = train_dynamics_masked(
            &model,
            &data,
            &hyper,
            seed,
            |name| name.starts_with("for.") || name.starts_with("inv."),
            |_, _| {},
        )?;
        write_loss_csv(dir.join("refit_losses.csv"), &losses)?;
        metrics.insert("refit_final_total_loss".into(), losses.last().expect("epochs ≥ 1").total);
        let held = collect_dataset(
            cfg,
            cfg.pretrain.held_out,
            seed.wrapping_add(REFIT_SEED_OFFSET).wrapping_add(HELD_OUT_SEED_OFFSET),
        )?;
        if let DatasetPayload::Vector(trajs) = &held.payload {
            metrics.insert("refit_inverse_mse".into(), inverse_mse(&model, trajs));
        }
        save_checkpoint(
            &dir.join("dynamics.ckpt"),
            &ckpt_meta(cfg, "dynamics", seed),
            &model.params.named_values(),
        )?;
        init = Some(model.params.named_values());
    }

    let spec = cfg.run_spec(seed);
    eprintln!(
        "[{}] seed {seed}: training for {} episodes over {} workers",
        cfg.scenario, spec.hyper.episode_budget, spec.hyper.workers
    );
    let out = train_run::<f32>(&spec, init.as_ref())?;
    write_episode_csv(dir.join("episodes.csv"), &out.rows, with_depth)?;
    save_checkpoint(&dir.join("reward.ckpt"), &ckpt_meta(cfg, "reward", seed), &out.reward_params)?;

    // Runs that trained dynamics parameters online get their own dynamics
    // checkpoint: trained values overlaid on the run's canonical initial
    // model, so a baseline's reward-trained encoder ships alongside the
    // never-touched decoder it actually ran with.
    if let Some(trained) = &out.dynamics_params {
        let model: DynamicsModel<f32> =
            DynamicsModel::new(cfg.dynamics_model_config(), &mut stream(seed, Stream::Init(0)));
        if let Some(list) = &init {
            model.params.load_named(&blob_map(list.clone()))?;
        }
        let trained_map = blob_map(trained.clone());
        let mut full = model.params.named_values();
        for (name, shape, values) in &mut full {
            if let Some((tshape, tvals)) = trained_map.get(name) {
                debug_assert_eq!(tshape, shape, "store and model disagree on {name}");
                *values = tvals.clone();
            }
        }
        save_checkpoint(&dir.join("dynamics.ckpt"), &ckpt_meta(cfg, "dynamics", seed), &full)?;
    }

    let returns: Vec<f64> = out.rows.iter().map(|r| r.undiscounted_return).collect();
    metrics.insert("episodes".into(), returns.len() as f64);
    metrics.insert(METRIC_FINAL_RETURN.into(), final_window_mean(&returns, 100));
    let record = RunRecord {
        scenario: cfg.scenario.tag().into(),
        seed,
        config_hash: cfg.config_hash(),
        version: cfg.version(),
        wall_clock_s: t0.elapsed().as_secs_f64(),
        metrics,
    };
    record.save(dir.join("record.toml"))?;
    write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    eprintln!(
        "[{}] seed {seed}: {} episodes, final-100 mean {:.3}, {:.1}s -> {}",
        cfg.scenario,
        returns.len(),
        record.metrics[METRIC_FINAL_RETURN],
        record.wall_clock_s,
        dir.display()
    );
    Ok(record)
}

/// The four-arm ablation study: identical reward training over world models
/// pretrained with different loss mixes. The full arm is realized as an
/// ordinary pretrain + frozen-reward chain nested under `<out>/ablate-full`;
/// the other arms are their own scenarios. Returns (arm name, per-seed
/// records) in presentation order.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<RunRecord>)>> {
    cfg.validate()?;
    let base = cfg.seeds[0];
    let mut arms = Vec::with_capacity(4);

    let mut pre = cfg.clone();
    pre.scenario = Scenario::Pretrain;
    pre.out_dir = format!("{}/ablate-full", cfg.out_dir);
    pre.seeds = vec![base];
    pre.inputs.dynamics_checkpoint = None;
    run_scenario(&pre, base)?;
    let ckpt = seed_dir(&pre, base).join("dynamics.ckpt");
    let mut full = cfg.clone();
    full.scenario = Scenario::Reward;
    full.out_dir = pre.out_dir.clone();
    full.inputs.dynamics_checkpoint = Some(ckpt.to_string_lossy().into_owned());
    let mut recs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        recs.push(run_scenario(&full, seed)?);
    }
    arms.push(("full".to_string(), recs));

    for (name, scenario) in [
        ("no-forward", Scenario::AblateNof),
        ("no-inverse", Scenario::AblateNoi),
        ("autoencoder", Scenario::AblateAe),
    ] {
        let mut arm = cfg.clone();
        arm.scenario = scenario;
        arm.inputs.dynamics_checkpoint = None;
        let mut recs = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            recs.push(run_scenario(&arm, seed)?);
        }
        arms.push((name.to_string(), recs));
    }
    Ok(arms)
}

/// Plain-text summary of an ablation study's final returns.
pub fn ablation_table(arms: &[(String, Vec<RunRecord>)]) -> String {
    let mut out = String::from("arm           seeds   median      min      max\n");
    for (name, recs) in arms {
        let finals: Vec<f64> =
            recs.iter().filter_map(|r| r.metrics.get(METRIC_FINAL_RETURN)).copied().collect();
        if finals.is_empty() {
            out.push_str(&format!("{name:<13} {:>5}        -        -        -\n", 0));
            continue;
        }
        let min = finals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = finals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "{name:<13} {:>5} {:>8.3} {:>8.3} {:>8.3}\n",
            finals.len(),
            median(&finals),
            min,
            max
        ));
    }
    out
}

/// Median with the even-count average convention.
pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub episode: u64,
    pub steps: u32,
    pub undiscounted_return: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_steps: f64,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("episode,steps,undiscounted_return\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.episode, r.steps, r.undiscounted_return));
        }
        out
    }

    fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len() as f64;
        let mean_return = rows.iter().map(|r| r.undiscounted_return).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|r| (r.undiscounted_return - mean_return).powi(2))
            .sum::<f64>()
            / n;
        let mean_steps = rows.iter().map(|r| r.steps as f64).sum::<f64>() / n;
        EvalReport { rows, mean_return, std_return: var.sqrt(), mean_steps }
    }
}

/// Roll greedy policy episodes (argmax action / tanh of the Gaussian mean)
/// from a (dynamics, reward) checkpoint pair, or uniform-random episodes
/// when `checkpoints` is `None`. Read-only: checkpoints are never written.
pub fn evaluate(
    cfg: &ExperimentConfig,
    checkpoints: Option<(&Path, &Path)>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Usage("evaluation needs at least one episode".into()));
    }
    cfg.env.validate()?;
    let models = match checkpoints {
        None => None,
        Some((dyn_path, rew_path)) => {
            let (dmeta, dparams) = load_checkpoint(dyn_path)?;
            let (rmeta, rparams) = load_checkpoint(rew_path)?;
            for (path, meta, module) in
                [(dyn_path, &dmeta, "dynamics"), (rew_path, &rmeta, "reward")]
            {
                if meta.module != module {
                    return Err(Error::Checkpoint(format!(
                        "{}: expected a {module} checkpoint, found module '{}'",
                        path.display(),
                        meta.module
                    )));
                }
                if meta.domain != domain_tag(cfg.env.domain()) {
                    return Err(Error::Checkpoint(format!(
                        "{}: domain '{}' does not match the configured environment",
                        path.display(),
                        meta.domain
                    )));
                }
            }
            let dynamics: DynamicsModel<f32> =
                DynamicsModel::new(cfg.dynamics_model_config(), &mut stream(seed, Stream::Init(0)));
            dynamics.params.load_named(&blob_map(dparams))?;
            let reward: RewardModel<f32> =
                RewardModel::new(cfg.reward_model_config(), &mut stream(seed, Stream::Init(1)));
            reward.params.load_named(&blob_map(rparams))?;
            Some((dynamics, reward))
        }
    };
    match cfg.env.domain() {
        DomainKind::Maze => eval_maze(cfg, models.as_ref(), episodes, seed),
        DomainKind::Continuous => eval_cont(cfg, models.as_ref(), episodes, seed),
    }
}

type Models = (DynamicsModel<f32>, RewardModel<f32>);

fn eval_maze(
    cfg: &ExperimentConfig,
    models: Option<&Models>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let (slip, negate) = match cfg.env {
        EnvSection::Maze { slip, negate } => (slip, negate),
        _ => unreachable!("dispatched on domain"),
    };
    let mut env: Box<dyn Env<Obs = MazeObs, Action = DiscreteAction>> = if negate {
        Box::new(NegateReward(MazeEnv::new(slip)))
    } else {
        Box::new(MazeEnv::new(slip))
    };
    let layout = four_rooms_layout();
    let mut rng = stream(seed, Stream::Eval);
    let mut rows = Vec::with_capacity(episodes);
    for episode in 1..=episodes as u64 {
        let mut obs = env.reset(&mut rng);
        let (mut h, mut c) = match models {
            Some((_, reward)) => reward.zero_hidden(1),
            None => (Tensor::zeros((1, 1), false), Tensor::zeros((1, 1), false)),
        };
        let mut ret = 0.0;
        let mut steps = 0u32;
        loop {
            let action = match models {
                None => uniform_maze_policy(&obs, &mut rng),
                Some((dynamics, reward)) => {
                    let (idx, h2, c2) = no_grad(|| -> Result<_> {
                        let batch =
                            ObsBatch::Sparse(Rc::new(vec![obs.active_features(&layout)]));
                        let z = dynamics.encode(&batch)?;
                        let pv = reward.policy_value(&z, &h, &c)?;
                        let probs = reward.action_probs(&pv.dist);
                        let mut best = 0;
                        for (i, p) in probs.iter().enumerate().skip(1) {
                            if *p > probs[best] {
                                best = i;
                            }
                        }
                        Ok((best, pv.h, pv.c))
                    })?;
                    h = h2;
                    c = c2;
                    DiscreteAction::from_index(idx)
                }
            };
            let s = env.step(&action, &mut rng)?;
            ret += s.reward;
            steps += 1;
            obs = s.obs;
            if s.done {
                break;
            }
        }
        rows.push(EvalRow { episode, steps, undiscounted_return: ret });
    }
    Ok(EvalReport::from_rows(rows))
}

fn eval_cont(
    cfg: &ExperimentConfig,
    models: Option<&Models>,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut env = PointMassEnv::new(cfg.env.continuous_config());
    let mut rng = stream(seed, Stream::Eval);
    let mut rows = Vec::with_capacity(episodes);
    for episode in 1..=episodes as u64 {
        let mut obs = env.reset(&mut rng);
        let (mut h, mut c) = match models {
            Some((_, reward)) => reward.zero_hidden(1),
            None => (Tensor::zeros((1, 1), false), Tensor::zeros((1, 1), false)),
        };
        let mut ret = 0.0;
        let mut steps = 0u32;
        loop {
            let action = match models {
                None => uniform_cont_policy(&obs, &mut rng),
                Some((dynamics, reward)) => {
                    let (a, h2, c2) = no_grad(|| -> Result<_> {
                        let batch =
                            ObsBatch::Dense(Tensor::new((1, obs.len()), obs.clone(), false));
                        let z = dynamics.encode(&batch)?;
                        let pv = reward.policy_value(&z, &h, &c)?;
                        let mean = pv.dist.value_vec();
                        Ok((
                            [(mean[0] as f64).tanh(), (mean[1] as f64).tanh()],
                            pv.h,
                            pv.c,
                        ))
                    })?;
                    h = h2;
                    c = c2;
                    a
                }
            };
            let s = env.step(&action, &mut rng)?;
            ret += s.reward;
            steps += 1;
            obs = s.obs;
            if s.done {
                break;
            }
        }
        rows.push(EvalRow { episode, steps, undiscounted_return: ret });
    }
    Ok(EvalReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exp::config::ModelSection;
    use crate::exp::metrics::read_episode_returns;
    use std::fs;

    fn tmp(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("latentrl-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    /// Desk-scale maze config: tiny model, short dataset, a handful of
    /// episodes — the full pipeline in seconds.
    fn tiny_maze(scenario: Scenario, out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::maze_default(scenario);
        cfg.out_dir = out.to_string_lossy().into_owned();
        cfg.seeds = vec![1];
        cfg.model = ModelSection {
            latent_dim: 8,
            dyn_lstm_hidden: 8,
            enc_hidden: 0,
            inv_hidden: 8,
            rew_lstm_hidden: 8,
        };
        cfg.pretrain.epochs = 2;
        cfg.pretrain.batch_size = 32;
        cfg.pretrain.trajectories = 60;
        cfg.pretrain.held_out = 20;
        cfg.reward.workers = 1;
        cfg.reward.episode_budget = 12;
        cfg.reward.t_max = 8;
        cfg
    }

    fn tiny_cont(scenario: Scenario, out: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::continuous_default(scenario);
        cfg.out_dir = out.to_string_lossy().into_owned();
        cfg.seeds = vec![1];
        cfg.env = EnvSection::Continuous {
            mass: 1.0,
            damping: 0.5,
            ctrl_cost: 0.1,
            reward_sign: 1.0,
            episode_cap: 6,
            dt: 0.05,
        };
        cfg.model = ModelSection {
            latent_dim: 6,
            dyn_lstm_hidden: 6,
            enc_hidden: 8,
            inv_hidden: 8,
            rew_lstm_hidden: 8,
        };
        cfg.pretrain.epochs = 2;
        cfg.pretrain.batch_size = 64;
        cfg.pretrain.trajectories = 40;
        cfg.pretrain.traj_len = 10;
        cfg.pretrain.held_out = 8;
        cfg.reward.workers = 1;
        cfg.reward.episode_budget = 5;
        cfg.reward.t_max = 5;
        cfg
    }

    #[test]
    fn pretrain_writes_artifacts_caches_and_is_deterministic() {
        let out = tmp("sc-pre");
        let cfg = tiny_maze(Scenario::Pretrain, &out);
        let rec = run_scenario(&cfg, 1).unwrap();
        let dir = seed_dir(&cfg, 1);
        for name in ["dynamics.ckpt", "losses.csv", "record.toml", "config.toml"] {
            assert!(dir.join(name).is_file(), "missing {name}");
        }
        for key in ["decoder_accuracy", "inverse_accuracy", "forward_accuracy", "latent_gap"] {
            let v = rec.metrics.get(key).copied().unwrap_or(f64::NAN);
            assert!(v.is_finite(), "{key} should be a finite probe value, got {v}");
        }
        assert!(rec.metrics["latent_gap"] > 0.0, "distinct states must get distinct codes");

        // Second call is a cache hit: the record comes back byte-identical,
        // wall clock included.
        let again = run_scenario(&cfg, 1).unwrap();
        assert_eq!(again, rec);

        // A forced re-run redoes the work but lands on the same bytes.
        let bytes = fs::read(dir.join("dynamics.ckpt")).unwrap();
        let mut forced = cfg.clone();
        forced.force = true;
        let rec2 = run_scenario(&forced, 1).unwrap();
        assert_eq!(rec2.config_hash, rec.config_hash, "force must not change the run identity");
        assert_eq!(fs::read(dir.join("dynamics.ckpt")).unwrap(), bytes);
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn reward_scenario_consumes_the_pretrained_checkpoint() {
        let out = tmp("sc-rew");
        let pre = tiny_maze(Scenario::Pretrain, &out);
        run_scenario(&pre, 1).unwrap();
        let ckpt = seed_dir(&pre, 1).join("dynamics.ckpt");

        let mut cfg = tiny_maze(Scenario::Reward, &out);
        cfg.inputs.dynamics_checkpoint = Some(ckpt.to_string_lossy().into_owned());
        let rec = run_scenario(&cfg, 1).unwrap();
        let dir = seed_dir(&cfg, 1);
        let returns = read_episode_returns(dir.join("episodes.csv")).unwrap();
        assert_eq!(returns.len(), 12, "single worker delivers the budget exactly");
        assert!(rec.metrics[METRIC_FINAL_RETURN].is_finite());
        assert_eq!(rec.metrics["episodes"], 12.0);
        let header = fs::read_to_string(dir.join("episodes.csv")).unwrap();
        assert!(!header.lines().next().unwrap().contains("planner_depth"));
        let (meta, _) = load_checkpoint(dir.join("reward.ckpt")).unwrap();
        assert_eq!(meta.module, "reward");
        assert!(!dir.join("dynamics.ckpt").exists(), "frozen runs own no dynamics copy");

        // Planning runs append the depth column.
        let mut plan = tiny_maze(Scenario::PlanEval, &out);
        plan.plan.depth = 1;
        plan.reward.episode_budget = 3;
        plan.inputs.dynamics_checkpoint = Some(ckpt.to_string_lossy().into_owned());
        run_scenario(&plan, 1).unwrap();
        let text = fs::read_to_string(seed_dir(&plan, 1).join("episodes.csv")).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",planner_depth"));
        assert!(text.lines().nth(1).unwrap().ends_with(",1"));
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn baseline_ships_the_dynamics_it_actually_ran_with() {
        let out = tmp("sc-base");
        let cfg = tiny_cont(Scenario::Baseline, &out);
        run_scenario(&cfg, 1).unwrap();
        let dir = seed_dir(&cfg, 1);
        let (meta, params) = load_checkpoint(dir.join("dynamics.ckpt")).unwrap();
        assert_eq!(meta.module, "dynamics");

        // The checkpoint must load into a full model (all groups present)...
        let model: DynamicsModel<f32> =
            DynamicsModel::new(cfg.dynamics_model_config(), &mut stream(1, Stream::Init(0)));
        let fresh: std::collections::HashMap<String, Vec<f32>> = model
            .params
            .named_values()
            .into_iter()
            .map(|(n, _, v)| (n, v))
            .collect();
        model.params.load_named(&blob_map(params.clone())).unwrap();

        // ... with a reward-trained encoder and the untouched initial decoder.
        let mut encoder_moved = false;
        for (name, _, values) in &params {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            if name.starts_with("enc.") {
                encoder_moved |= bits(values) != bits(&fresh[name]);
            } else {
                assert_eq!(
                    bits(values),
                    bits(&fresh[name]),
                    "{name} is not trained by a baseline run"
                );
            }
        }
        assert!(encoder_moved, "the baseline's encoder trains through the reward loss");
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn transfer_dynamics_pins_the_encoder_and_never_touches_the_source() {
        let out = tmp("sc-tdyn");
        let pre = tiny_cont(Scenario::Pretrain, &out);
        run_scenario(&pre, 1).unwrap();
        let source = seed_dir(&pre, 1).join("dynamics.ckpt");
        let source_bytes = fs::read(&source).unwrap();
        let (_, source_params) = load_checkpoint(&source).unwrap();

        let mut cfg = tiny_cont(Scenario::TransferDynamics, &out);
        cfg.env = EnvSection::Continuous {
            mass: 2.0,
            damping: 1.5,
            ctrl_cost: 0.1,
            reward_sign: 1.0,
            episode_cap: 6,
            dt: 0.05,
        };
        cfg.pretrain.trajectories = 30;
        cfg.reward.episode_budget = 4;
        cfg.inputs.dynamics_checkpoint = Some(source.to_string_lossy().into_owned());
        let rec = run_scenario(&cfg, 1).unwrap();
        let dir = seed_dir(&cfg, 1);
        for name in ["refit_losses.csv", "dynamics.ckpt", "episodes.csv", "reward.ckpt"] {
            assert!(dir.join(name).is_file(), "missing {name}");
        }
        assert!(rec.metrics["refit_inverse_mse"].is_finite());

        let (_, refit) = load_checkpoint(dir.join("dynamics.ckpt")).unwrap();
        let src: std::collections::HashMap<String, Vec<u32>> = source_params
            .into_iter()
            .map(|(n, _, v)| (n, v.iter().map(|x| x.to_bits()).collect()))
            .collect();
        let mut forward_moved = false;
        for (name, _, values) in &refit {
            let bits: Vec<u32> = values.iter().map(|x| x.to_bits()).collect();
            if name.starts_with("enc.") || name.starts_with("dec.") {
                assert_eq!(bits, src[name], "{name} must stay pinned through the re-fit");
            } else {
                forward_moved |= bits != src[name];
            }
        }
        assert!(forward_moved, "the re-fit should move the forward/inverse models");
        assert_eq!(fs::read(&source).unwrap(), source_bytes, "source checkpoint rewritten");
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn evaluation_rolls_random_and_greedy_policies_read_only() {
        let out = tmp("sc-eval");
        let pre = tiny_maze(Scenario::Pretrain, &out);
        run_scenario(&pre, 1).unwrap();
        let dckpt = seed_dir(&pre, 1).join("dynamics.ckpt");
        let mut rew = tiny_maze(Scenario::Reward, &out);
        rew.reward.episode_budget = 6;
        rew.inputs.dynamics_checkpoint = Some(dckpt.to_string_lossy().into_owned());
        run_scenario(&rew, 1).unwrap();
        let rckpt = seed_dir(&rew, 1).join("reward.ckpt");

        let random = evaluate(&rew, None, 10, 7).unwrap();
        assert_eq!(random.rows.len(), 10);
        assert!(random.mean_return < 0.0, "random maze walks pay the step penalty");
        assert!(random.std_return >= 0.0);

        let before = (fs::read(&dckpt).unwrap(), fs::read(&rckpt).unwrap());
        let greedy = evaluate(&rew, Some((&dckpt, &rckpt)), 10, 7).unwrap();
        assert_eq!(greedy.rows.len(), 10);
        let csv = greedy.csv();
        assert_eq!(csv.lines().next().unwrap(), "episode,steps,undiscounted_return");
        assert_eq!(csv.lines().count(), 11);
        assert_eq!(before.0, fs::read(&dckpt).unwrap(), "evaluation must not write checkpoints");
        assert_eq!(before.1, fs::read(&rckpt).unwrap());

        // Checkpoints in the wrong slots are refused.
        assert!(matches!(
            evaluate(&rew, Some((&rckpt, &dckpt)), 2, 7),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(evaluate(&rew, None, 0, 7), Err(Error::Usage(_))));
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn ablation_runs_four_arms_and_tabulates_them() {
        let out = tmp("sc-abl");
        let mut cfg = tiny_maze(Scenario::AblateNof, &out);
        cfg.pretrain.epochs = 1;
        cfg.pretrain.trajectories = 40;
        cfg.reward.episode_budget = 6;
        let arms = run_ablation(&cfg).unwrap();
        assert_eq!(arms.len(), 4);
        let names: Vec<&str> = arms.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["full", "no-forward", "no-inverse", "autoencoder"]);
        for (name, recs) in &arms {
            assert_eq!(recs.len(), 1, "{name}: one record per seed");
            assert!(recs[0].metrics[METRIC_FINAL_RETURN].is_finite());
        }
        let table = ablation_table(&arms);
        assert!(table.contains("full") && table.contains("autoencoder"));
        assert_eq!(table.lines().count(), 5);
        let _ = fs::remove_dir_all(&out);
    }

    #[test]
    fn medians_follow_the_even_count_convention() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[5.0]), 5.0);
    }
}
