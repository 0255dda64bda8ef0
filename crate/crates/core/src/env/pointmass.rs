use rand::Rng as _;

use super::{Env, Step};
use crate::error::Error;
use crate::rng::Rng;

/// Damped 2-D point mass under force control. Reward pays for velocity along
/// +x (or −x when `reward_sign` is flipped) minus a quadratic control cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousEnvConfig {
    pub mass: f64,
    pub damping: f64,
    pub ctrl_cost: f64,
    pub reward_sign: f64,
    pub episode_cap: u32,
    pub dt: f64,
}

impl Default for ContinuousEnvConfig {
    fn default() -> Self {
        ContinuousEnvConfig {
            mass: 1.0,
            damping: 0.5,
            ctrl_cost: 0.1,
            reward_sign: 1.0,
            episode_cap: 500,
            dt: 0.05,
        }
    }
}

impl ContinuousEnvConfig {
    /// The transfer target: same reward, heavier and more damped plant.
    pub fn modified_dynamics(mut self) -> Self {
        self.mass *= 2.0;
        self.damping *= 3.0;
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if !(self.mass > 0.0) {
            return Err(Error::Config { field: "mass".into(), reason: "must be > 0".into() });
        }
        if self.damping < 0.0 {
            return Err(Error::Config { field: "damping".into(), reason: "must be ≥ 0".into() });
        }
        if self.episode_cap < 1 {
            return Err(Error::Config { field: "episode_cap".into(), reason: "must be ≥ 1".into() });
        }
        Ok(())
    }
}

pub const CONT_STATE_DIM: usize = 4; // [px, py, vx, vy]
pub const CONT_ACTION_DIM: usize = 2;

#[derive(Debug, Clone)]
pub struct PointMassEnv {
    pub cfg: ContinuousEnvConfig,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: u32,
}

impl PointMassEnv {
    pub fn new(cfg: ContinuousEnvConfig) -> Self {
        cfg.validate().expect("invalid continuous environment config");
        PointMassEnv { cfg, pos: [0.0; 2], vel: [0.0; 2], steps: 0 }
    }

    pub fn state(&self) -> Vec<f32> {
        vec![self.pos[0] as f32, self.pos[1] as f32, self.vel[0] as f32, self.vel[1] as f32]
    }

    pub fn speed(&self) -> f64 {
        (self.vel[0] * self.vel[0] + self.vel[1] * self.vel[1]).sqrt()
    }
}

impl Env for PointMassEnv {
    type Obs = Vec<f32>;
    type Action = [f64; 2];

    /// Position zero, velocity uniform in [−0.05, 0.05]².
    fn reset(&mut self, rng: &mut Rng) -> Vec<f32> {
        self.pos = [0.0; 2];
        self.vel = [rng.gen_range(-0.05..=0.05), rng.gen_range(-0.05..=0.05)];
        self.steps = 0;
        self.state()
    }

    /// Semi-implicit Euler: v' = v + (a/m − damping·v)·dt, x' = x + v'·dt.
    /// Actions are clamped componentwise to [−1, 1] before use; the control
    /// cost is charged on the clamped action.
    fn step(&mut self, action: &[f64; 2], _rng: &mut Rng) -> crate::Result<Step<Vec<f32>>> {
        let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let cfg = &self.cfg;
        for i in 0..2 {
            self.vel[i] += (a[i] / cfg.mass - cfg.damping * self.vel[i]) * cfg.dt;
            self.pos[i] += self.vel[i] * cfg.dt;
        }
        self.steps += 1;
        // the sign flips the whole reward (velocity term and control cost),
        // so reward_sign = −1 is exactly the negated-reward task
        let reward =
            cfg.reward_sign * (self.vel[0] - cfg.ctrl_cost * (a[0] * a[0] + a[1] * a[1]));
        let finite = self.pos.iter().chain(&self.vel).all(|v| v.is_finite()) && reward.is_finite();
        if !finite {
            return Err(Error::EnvFault(format!(
                "non-finite state after step {}: pos {:?} vel {:?}",
                self.steps, self.pos, self.vel
            )));
        }
        Ok(Step { obs: self.state(), reward, done: self.steps >= cfg.episode_cap })
    }
}
