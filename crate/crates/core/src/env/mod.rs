//! Desk-scale environments: a four-rooms gridworld with binary observations
//! and a damped point-mass with continuous control, plus off-policy dataset
//! collection. All randomness flows through injected RNGs; fixed seeds give
//! identical trajectories.

mod dataset;
mod maze;
mod pointmass;

pub use dataset::{DatasetPayload, MazeTraj, OfflineDataset, VecTraj};
pub use maze::{
    decode_dense, four_rooms_layout, DiscreteAction, MazeEnv, MazeLayout, MazeObs,
    MAZE_CHANNELS, MAZE_EPISODE_CAP, MAZE_GOAL_BONUS, MAZE_OBS_DIM, MAZE_SIZE, MAZE_STEP_PENALTY,
};
pub use pointmass::{
    ContinuousEnvConfig, PointMassEnv, CONT_ACTION_DIM, CONT_STATE_DIM,
};

use rand::Rng as _;

use crate::rng::{stream, Rng, Stream};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Step<O> {
    pub obs: O,
    pub reward: f64,
    pub done: bool,
}

/// One (s, a, r, s', done) record; `done` marks an episode boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<O, A> {
    pub state: O,
    pub action: A,
    pub reward: f64,
    pub next_state: O,
    pub done: bool,
}

/// Episodic environment. Instances are single-threaded; concurrent workers
/// each own a private instance.
pub trait Env {
    type Obs: Clone;
    type Action: Clone;
    fn reset(&mut self, rng: &mut Rng) -> Self::Obs;
    fn step(&mut self, action: &Self::Action, rng: &mut Rng) -> Result<Step<Self::Obs>>;
}

/// Reward-flipping wrapper: identical dynamics, −r per step.
#[derive(Debug, Clone)]
pub struct NegateReward<E: Env>(pub E);

impl<E: Env> Env for NegateReward<E> {
    type Obs = E::Obs;
    type Action = E::Action;

    fn reset(&mut self, rng: &mut Rng) -> Self::Obs {
        self.0.reset(rng)
    }

    fn step(&mut self, action: &Self::Action, rng: &mut Rng) -> Result<Step<Self::Obs>> {
        let mut s = self.0.step(action, rng)?;
        s.reward = -s.reward;
        Ok(s)
    }
}

pub fn uniform_maze_policy(_obs: &MazeObs, rng: &mut Rng) -> DiscreteAction {
    DiscreteAction::from_index(rng.gen_range(0..4))
}

pub fn uniform_cont_policy(_obs: &[f32], rng: &mut Rng) -> [f64; 2] {
    [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)]
}

/// Roll episodes and cut them into consecutive windows of exactly
/// `traj_len` transitions. A window never crosses a reset: when an episode
/// ends mid-window the partial window is dropped and collection continues
/// from a fresh episode.
pub fn collect_offline_maze<F>(
    env: &mut MazeEnv,
    mut policy: F,
    policy_tag: &str,
    n_traj: usize,
    traj_len: usize,
    seed: u64,
) -> Result<OfflineDataset>
where
    F: FnMut(&MazeObs, &mut Rng) -> DiscreteAction,
{
    assert!(traj_len >= 1, "traj_len must be at least 1");
    let mut rng = stream(seed, Stream::Collect(0));
    let mut trajs = Vec::with_capacity(n_traj);
    'collect: while trajs.len() < n_traj {
        let mut obs = env.reset(&mut rng);
        let mut episode_done = false;
        while !episode_done {
            let goal = obs.goal;
            let mut cells = Vec::with_capacity(traj_len + 1);
            cells.push(obs.agent);
            let mut actions = Vec::with_capacity(traj_len);
            let mut rewards = Vec::with_capacity(traj_len);
            let mut dones = Vec::with_capacity(traj_len);
            for _ in 0..traj_len {
                let a = policy(&obs, &mut rng);
                let s = env.step(&a, &mut rng)?;
                cells.push(s.obs.agent);
                actions.push(a.index() as u8);
                rewards.push(s.reward as f32);
                dones.push(s.done);
                obs = s.obs;
                episode_done = s.done;
                if episode_done {
                    break;
                }
            }
            if actions.len() == traj_len {
                trajs.push(MazeTraj { goal, cells, actions, rewards, dones });
                if trajs.len() == n_traj {
                    break 'collect;
                }
            }
        }
    }
    Ok(OfflineDataset {
        env_id: "maze".into(),
        policy: policy_tag.into(),
        seed,
        traj_len,
        payload: DatasetPayload::Maze(trajs),
    })
}

/// Continuous-environment counterpart of [`collect_offline_maze`]; same
/// windowing rules, vector payload.
pub fn collect_offline_cont<F>(
    env: &mut PointMassEnv,
    mut policy: F,
    policy_tag: &str,
    n_traj: usize,
    traj_len: usize,
    seed: u64,
) -> Result<OfflineDataset>
where
    F: FnMut(&[f32], &mut Rng) -> [f64; 2],
{
    assert!(traj_len >= 1, "traj_len must be at least 1");
    let mut rng = stream(seed, Stream::Collect(0));
    let mut trajs = Vec::with_capacity(n_traj);
    'collect: while trajs.len() < n_traj {
        let mut obs = env.reset(&mut rng);
        let mut episode_done = false;
        while !episode_done {
            let mut states = Vec::with_capacity((traj_len + 1) * CONT_STATE_DIM);
            states.extend_from_slice(&obs);
            let mut actions = Vec::with_capacity(traj_len * CONT_ACTION_DIM);
            let mut rewards = Vec::with_capacity(traj_len);
            let mut dones = Vec::with_capacity(traj_len);
            for _ in 0..traj_len {
                let a = policy(&obs, &mut rng);
                let s = env.step(&a, &mut rng)?;
                states.extend_from_slice(&s.obs);
                actions.push(a[0] as f32);
                actions.push(a[1] as f32);
                rewards.push(s.reward as f32);
                dones.push(s.done);
                obs = s.obs;
                episode_done = s.done;
                if episode_done {
                    break;
                }
            }
            if rewards.len() == traj_len {
                trajs.push(VecTraj {
                    obs_dim: CONT_STATE_DIM,
                    act_dim: CONT_ACTION_DIM,
                    states,
                    actions,
                    rewards,
                    dones,
                });
                if trajs.len() == n_traj {
                    break 'collect;
                }
            }
        }
    }
    Ok(OfflineDataset {
        env_id: "pointmass".into(),
        policy: policy_tag.into(),
        seed,
        traj_len,
        payload: DatasetPayload::Vector(trajs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negated_maze_goal_step_pays_minus_nine_point_nine() {
        let mut env = NegateReward(MazeEnv::new(0.0));
        let mut rng = stream(2, Stream::Collect(7));
        env.reset(&mut rng);
        env.0.set_positions(11, 12); // adjacent open cells
        let s = env.step(&DiscreteAction::Right, &mut rng).unwrap();
        assert!((s.reward + 9.9).abs() < 1e-12);
        assert!(s.done);
    }

    #[test]
    fn double_negation_is_the_identity() {
        let roll = |double: bool| {
            let base = MazeEnv::new(0.2);
            let mut rng = stream(6, Stream::Collect(9));
            let mut log = vec![];
            if double {
                let mut env = NegateReward(NegateReward(base));
                env.reset(&mut rng);
                for i in 0..100 {
                    let s = env.step(&DiscreteAction::from_index(i % 4), &mut rng).unwrap();
                    log.push((s.obs.agent, s.reward));
                    if s.done {
                        env.reset(&mut rng);
                    }
                }
            } else {
                let mut env = base;
                env.reset(&mut rng);
                for i in 0..100 {
                    let s = env.step(&DiscreteAction::from_index(i % 4), &mut rng).unwrap();
                    log.push((s.obs.agent, s.reward));
                    if s.done {
                        env.reset(&mut rng);
                    }
                }
            }
            log
        };
        assert_eq!(roll(false), roll(true));
    }

    #[test]
    fn sign_flipped_config_equals_negated_wrapper() {
        let mut flipped = PointMassEnv::new(ContinuousEnvConfig {
            reward_sign: -1.0,
            ..Default::default()
        });
        let mut negated = NegateReward(PointMassEnv::new(ContinuousEnvConfig::default()));
        let mut rng_a = stream(8, Stream::Collect(10));
        let mut rng_b = stream(8, Stream::Collect(10));
        flipped.reset(&mut rng_a);
        negated.reset(&mut rng_b);
        for i in 0..200 {
            let a = [(i as f64 * 0.13).sin(), (i as f64 * 0.29).cos()];
            let sa = flipped.step(&a, &mut rng_a).unwrap();
            let sb = negated.step(&a, &mut rng_b).unwrap();
            assert_eq!(sa.obs, sb.obs, "dynamics must be identical");
            assert!((sa.reward - sb.reward).abs() < 1e-15, "rewards must agree step-for-step");
        }
    }

    #[test]
    fn maze_collection_windows_never_cross_resets() {
        let mut env = MazeEnv::new(0.0);
        let ds =
            collect_offline_maze(&mut env, uniform_maze_policy, "uniform-random", 200, 5, 31)
                .unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.n_trajectories(), 200);
        assert_eq!(ds.n_transitions(), 1000);
        if let DatasetPayload::Maze(trajs) = &ds.payload {
            for tr in trajs {
                assert_eq!(tr.len(), 5, "every window has exactly traj_len transitions");
                for t in 0..tr.len() {
                    let tx = tr.transition(t);
                    assert_eq!(tx.next_state.goal, tx.state.goal, "goal fixed within window");
                    if tx.done {
                        assert_eq!(t, tr.len() - 1, "episode end only at a window boundary");
                    }
                    // reward convention: −0.1, or +9.9 on the goal step
                    let goal_step = tx.next_state.agent == tx.state.goal;
                    let expect = if goal_step { 9.9 } else { -0.1 };
                    assert!((tx.reward - expect).abs() < 1e-6);
                }
            }
        } else {
            panic!("maze collection must produce a maze payload");
        }
    }

    #[test]
    fn maze_collection_is_seed_deterministic() {
        let mut e1 = MazeEnv::new(0.1);
        let mut e2 = MazeEnv::new(0.1);
        let d1 = collect_offline_maze(&mut e1, uniform_maze_policy, "u", 50, 5, 77).unwrap();
        let d2 = collect_offline_maze(&mut e2, uniform_maze_policy, "u", 50, 5, 77).unwrap();
        assert_eq!(d1, d2);
        let d3 = collect_offline_maze(&mut e2, uniform_maze_policy, "u", 50, 5, 78).unwrap();
        assert_ne!(d1, d3, "different seeds should differ");
    }

    #[test]
    fn cont_collection_chains_states() {
        let mut env = PointMassEnv::new(ContinuousEnvConfig::default());
        let ds =
            collect_offline_cont(&mut env, uniform_cont_policy, "uniform-random", 40, 20, 13)
                .unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.n_transitions(), 800);
        if let DatasetPayload::Vector(trajs) = &ds.payload {
            for tr in trajs {
                assert_eq!(tr.len(), 20);
                for t in 0..tr.len() - 1 {
                    assert_eq!(tr.transition(t).next_state, tr.transition(t + 1).state);
                }
                for t in 0..tr.len() {
                    let a = tr.action(t);
                    assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
                }
            }
        } else {
            panic!("continuous collection must produce a vector payload");
        }
    }
}
