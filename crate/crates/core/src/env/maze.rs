use rand::Rng as _;

use super::{Env, Step};
use crate::rng::Rng;

pub const MAZE_SIZE: usize = 10;
/// Binary feature channels per cell: 0 = agent, 1 = goal, 2 = wall,
/// 3–8 reserved (always zero), keeping the 10×10×9 observation shape.
pub const MAZE_CHANNELS: usize = 9;
pub const MAZE_OBS_DIM: usize = MAZE_SIZE * MAZE_SIZE * MAZE_CHANNELS;
pub const MAZE_EPISODE_CAP: u32 = 250;
pub const MAZE_STEP_PENALTY: f64 = -0.1;
pub const MAZE_GOAL_BONUS: f64 = 10.0;

const CH_AGENT: usize = 0;
const CH_GOAL: usize = 1;
const CH_WALL: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscreteAction {
    Up,
    Down,
    Left,
    Right,
}

impl DiscreteAction {
    pub const ALL: [DiscreteAction; 4] = [
        DiscreteAction::Up,
        DiscreteAction::Down,
        DiscreteAction::Left,
        DiscreteAction::Right,
    ];

    pub fn index(self) -> usize {
        match self {
            DiscreteAction::Up => 0,
            DiscreteAction::Down => 1,
            DiscreteAction::Left => 2,
            DiscreteAction::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    /// (row delta, col delta); rows grow downward.
    fn delta(self) -> (i32, i32) {
        match self {
            DiscreteAction::Up => (-1, 0),
            DiscreteAction::Down => (1, 0),
            DiscreteAction::Left => (0, -1),
            DiscreteAction::Right => (0, 1),
        }
    }
}

/// Fixed 10×10 grid of four rooms: border walls, a vertical dividing wall at
/// column 5 and a horizontal one at row 5, one door per dividing wall segment.
/// The layout never changes between episodes.
#[derive(Debug, Clone)]
pub struct MazeLayout {
    pub width: usize,
    pub height: usize,
    walls: [[bool; MAZE_SIZE]; MAZE_SIZE],
    /// Door cells punched through the interior dividing walls.
    pub doors: Vec<(usize, usize)>,
    open: Vec<u16>,
    wall_features: Vec<u32>,
}

pub fn four_rooms_layout() -> MazeLayout {
    let mut walls = [[false; MAZE_SIZE]; MAZE_SIZE];
    for i in 0..MAZE_SIZE {
        walls[0][i] = true;
        walls[MAZE_SIZE - 1][i] = true;
        walls[i][0] = true;
        walls[i][MAZE_SIZE - 1] = true;
    }
    for i in 1..MAZE_SIZE - 1 {
        walls[i][5] = true; // vertical divider
        walls[5][i] = true; // horizontal divider
    }
    let doors = vec![(2, 5), (7, 5), (5, 2), (5, 7)];
    for &(r, c) in &doors {
        walls[r][c] = false;
    }

    let mut open = Vec::new();
    let mut wall_features = Vec::new();
    for r in 0..MAZE_SIZE {
        for c in 0..MAZE_SIZE {
            let cell = (r * MAZE_SIZE + c) as u16;
            if walls[r][c] {
                wall_features.push(feature_index(cell, CH_WALL));
            } else {
                open.push(cell);
            }
        }
    }
    MazeLayout { width: MAZE_SIZE, height: MAZE_SIZE, walls, doors, open, wall_features }
}

fn feature_index(cell: u16, channel: usize) -> u32 {
    cell as u32 * MAZE_CHANNELS as u32 + channel as u32
}

impl MazeLayout {
    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        self.walls[row][col]
    }

    pub fn is_wall_cell(&self, cell: u16) -> bool {
        self.walls[cell as usize / MAZE_SIZE][cell as usize % MAZE_SIZE]
    }

    /// All non-wall cells, ascending (row-major cell index).
    pub fn open_cells(&self) -> &[u16] {
        &self.open
    }
}

/// Agent/goal placement on the fixed layout. The full observation is the
/// 10×10×9 binary grid; this compact form plus the layout reconstructs it
/// exactly (`to_dense` / `active_features`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MazeObs {
    pub agent: u16,
    pub goal: u16,
}

impl MazeObs {
    /// Flattened binary observation, cell-major then channel:
    /// index = cell·9 + channel.
    pub fn to_dense(&self, layout: &MazeLayout) -> Vec<f32> {
        let mut v = vec![0.0f32; MAZE_OBS_DIM];
        for &f in self.active_features(layout).iter() {
            v[f as usize] = 1.0;
        }
        v
    }

    /// Indices of the 1-bits of the dense observation (agent, goal, walls).
    pub fn active_features(&self, layout: &MazeLayout) -> Vec<u32> {
        let mut idx = Vec::with_capacity(layout.wall_features.len() + 2);
        idx.push(feature_index(self.agent, CH_AGENT));
        idx.push(feature_index(self.goal, CH_GOAL));
        idx.extend_from_slice(&layout.wall_features);
        idx
    }
}

/// Recover (agent, goal) from a dense observation; exact inverse of
/// `to_dense` for any valid observation.
pub fn decode_dense(obs: &[f32]) -> MazeObs {
    let mut agent = 0u16;
    let mut goal = 0u16;
    for cell in 0..(MAZE_SIZE * MAZE_SIZE) as u16 {
        if obs[feature_index(cell, CH_AGENT) as usize] > 0.5 {
            agent = cell;
        }
        if obs[feature_index(cell, CH_GOAL) as usize] > 0.5 {
            goal = cell;
        }
    }
    MazeObs { agent, goal }
}

/// Four-rooms gridworld: −0.1 per step (including the goal step), +10 on
/// reaching the goal, episodes capped at 250 steps. With probability `p_s`
/// the environment replaces the chosen action by a uniformly random one.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub layout: MazeLayout,
    pub p_s: f64,
    agent: u16,
    goal: u16,
    steps: u32,
}

impl MazeEnv {
    pub fn new(p_s: f64) -> Self {
        assert!((0.0..=1.0).contains(&p_s), "p_s must be a probability, got {p_s}");
        MazeEnv { layout: four_rooms_layout(), p_s, agent: 0, goal: 0, steps: 0 }
    }

    pub fn obs(&self) -> MazeObs {
        MazeObs { agent: self.agent, goal: self.goal }
    }

    #[cfg(test)]
    pub(crate) fn set_positions(&mut self, agent: u16, goal: u16) {
        assert!(!self.layout.is_wall_cell(agent) && !self.layout.is_wall_cell(goal));
        self.agent = agent;
        self.goal = goal;
        self.steps = 0;
    }

    fn move_from(&self, cell: u16, action: DiscreteAction) -> u16 {
        let (r, c) = (cell as i32 / MAZE_SIZE as i32, cell as i32 % MAZE_SIZE as i32);
        let (dr, dc) = action.delta();
        let (nr, nc) = (r + dr, c + dc);
        // border walls make out-of-range impossible, but guard anyway
        if nr < 0 || nc < 0 || nr >= MAZE_SIZE as i32 || nc >= MAZE_SIZE as i32 {
            return cell;
        }
        if self.layout.is_wall(nr as usize, nc as usize) {
            cell
        } else {
            (nr * MAZE_SIZE as i32 + nc) as u16
        }
    }
}

impl Env for MazeEnv {
    type Obs = MazeObs;
    type Action = DiscreteAction;

    /// Uniform placement of agent and goal on distinct open cells.
    fn reset(&mut self, rng: &mut Rng) -> MazeObs {
        let open = &self.layout.open;
        self.agent = open[rng.gen_range(0..open.len())];
        loop {
            self.goal = open[rng.gen_range(0..open.len())];
            if self.goal != self.agent {
                break;
            }
        }
        self.steps = 0;
        self.obs()
    }

    fn step(&mut self, action: &DiscreteAction, rng: &mut Rng) -> crate::Result<Step<MazeObs>> {
        // Always draw the slip variable so RNG consumption per step is
        // constant in p_s; at p_s = 0 the outcome is action-deterministic.
        let slip: f64 = rng.gen();
        let executed = if slip < self.p_s {
            DiscreteAction::ALL[rng.gen_range(0..4)]
        } else {
            *action
        };
        self.agent = self.move_from(self.agent, executed);
        self.steps += 1;
        let reached = self.agent == self.goal;
        let reward = MAZE_STEP_PENALTY + if reached { MAZE_GOAL_BONUS } else { 0.0 };
        let done = reached || self.steps >= MAZE_EPISODE_CAP;
        Ok(Step { obs: self.obs(), reward, done })
    }
}
