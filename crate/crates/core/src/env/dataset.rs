use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::maze::{DiscreteAction, MazeObs};
use super::Transition;
use crate::error::Error;
use crate::Result;

const MAGIC: &[u8; 8] = b"LRLDS001";

/// One fixed-length window of consecutive maze transitions from a single
/// episode. States are stored as the cell chain (length + 1), so temporal
/// consistency holds by construction; the goal is constant within a window.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeTraj {
    pub goal: u16,
    /// Visited cells, `len + 1` entries; step t goes cells[t] → cells[t+1].
    pub cells: Vec<u16>,
    pub actions: Vec<u8>,
    /// Rewards ×10 are integral (−0.1 / +9.9), but stored as raw f32.
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

impl MazeTraj {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn obs(&self, t: usize) -> MazeObs {
        MazeObs { agent: self.cells[t], goal: self.goal }
    }

    pub fn transition(&self, t: usize) -> Transition<MazeObs, DiscreteAction> {
        Transition {
            state: self.obs(t),
            action: DiscreteAction::from_index(self.actions[t] as usize),
            reward: self.rewards[t] as f64,
            next_state: self.obs(t + 1),
            done: self.dones[t],
        }
    }
}

/// One fixed-length window of consecutive vector-state transitions. States
/// are stored flat: `(len + 1) · obs_dim` values, step t reading
/// `states[t·obs_dim ..]`; actions likewise `len · act_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct VecTraj {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub states: Vec<f32>,
    pub actions: Vec<f32>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
}

impl VecTraj {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f32] {
        &self.states[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn action(&self, t: usize) -> &[f32] {
        &self.actions[t * self.act_dim..(t + 1) * self.act_dim]
    }

    pub fn transition(&self, t: usize) -> Transition<Vec<f32>, Vec<f32>> {
        Transition {
            state: self.state(t).to_vec(),
            action: self.action(t).to_vec(),
            reward: self.rewards[t] as f64,
            next_state: self.state(t + 1).to_vec(),
            done: self.dones[t],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetPayload {
    Maze(Vec<MazeTraj>),
    Vector(Vec<VecTraj>),
}

/// Off-policy trajectory corpus with provenance (environment id, generating
/// policy tag, seed). All trajectories share one length and never cross an
/// episode reset.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env_id: String,
    pub policy: String,
    pub seed: u64,
    pub traj_len: usize,
    pub payload: DatasetPayload,
}

impl OfflineDataset {
    pub fn n_trajectories(&self) -> usize {
        match &self.payload {
            DatasetPayload::Maze(t) => t.len(),
            DatasetPayload::Vector(t) => t.len(),
        }
    }

    pub fn n_transitions(&self) -> usize {
        self.n_trajectories() * self.traj_len
    }

    /// Structural integrity: uniform lengths, consistent dims, state chains.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Dataset(msg));
        match &self.payload {
            DatasetPayload::Maze(trajs) => {
                for (i, tr) in trajs.iter().enumerate() {
                    if tr.len() != self.traj_len
                        || tr.cells.len() != self.traj_len + 1
                        || tr.rewards.len() != self.traj_len
                        || tr.dones.len() != self.traj_len
                    {
                        return fail(format!("trajectory {i} has inconsistent lengths"));
                    }
                }
            }
            DatasetPayload::Vector(trajs) => {
                for (i, tr) in trajs.iter().enumerate() {
                    if tr.len() != self.traj_len
                        || tr.states.len() != (self.traj_len + 1) * tr.obs_dim
                        || tr.actions.len() != self.traj_len * tr.act_dim
                        || tr.dones.len() != self.traj_len
                    {
                        return fail(format!("trajectory {i} has inconsistent lengths"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Versioned little-endian binary layout (see README for the format).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_str(&mut w, &self.env_id)?;
        write_str(&mut w, &self.policy)?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.traj_len as u32).to_le_bytes())?;
        match &self.payload {
            DatasetPayload::Maze(trajs) => {
                w.write_all(&[0u8])?;
                w.write_all(&(trajs.len() as u32).to_le_bytes())?;
                for tr in trajs {
                    w.write_all(&tr.goal.to_le_bytes())?;
                    for &c in &tr.cells {
                        w.write_all(&c.to_le_bytes())?;
                    }
                    w.write_all(&tr.actions)?;
                    for &r in &tr.rewards {
                        w.write_all(&r.to_le_bytes())?;
                    }
                    for &d in &tr.dones {
                        w.write_all(&[d as u8])?;
                    }
                }
            }
            DatasetPayload::Vector(trajs) => {
                w.write_all(&[1u8])?;
                let (obs_dim, act_dim) = trajs
                    .first()
                    .map(|t| (t.obs_dim as u32, t.act_dim as u32))
                    .unwrap_or((0, 0));
                w.write_all(&obs_dim.to_le_bytes())?;
                w.write_all(&act_dim.to_le_bytes())?;
                w.write_all(&(trajs.len() as u32).to_le_bytes())?;
                for tr in trajs {
                    for &v in tr.states.iter().chain(&tr.actions).chain(&tr.rewards) {
                        w.write_all(&v.to_le_bytes())?;
                    }
                    for &d in &tr.dones {
                        w.write_all(&[d as u8])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<OfflineDataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Dataset(format!(
                "{}: bad magic {:?} (expected {:?})",
                path.display(),
                magic,
                MAGIC
            )));
        }
        let env_id = read_str(&mut r)?;
        let policy = read_str(&mut r)?;
        let seed = read_u64(&mut r)?;
        let traj_len = read_u32(&mut r)? as usize;
        let kind = read_u8(&mut r)?;
        let payload = match kind {
            0 => {
                let n = read_u32(&mut r)? as usize;
                let mut trajs = Vec::with_capacity(n);
                for _ in 0..n {
                    let goal = read_u16(&mut r)?;
                    let mut cells = Vec::with_capacity(traj_len + 1);
                    for _ in 0..traj_len + 1 {
                        cells.push(read_u16(&mut r)?);
                    }
                    let mut actions = vec![0u8; traj_len];
                    r.read_exact(&mut actions)?;
                    let mut rewards = Vec::with_capacity(traj_len);
                    for _ in 0..traj_len {
                        rewards.push(read_f32(&mut r)?);
                    }
                    let mut dones = Vec::with_capacity(traj_len);
                    for _ in 0..traj_len {
                        dones.push(read_u8(&mut r)? != 0);
                    }
                    trajs.push(MazeTraj { goal, cells, actions, rewards, dones });
                }
                DatasetPayload::Maze(trajs)
            }
            1 => {
                let obs_dim = read_u32(&mut r)? as usize;
                let act_dim = read_u32(&mut r)? as usize;
                let n = read_u32(&mut r)? as usize;
                let mut trajs = Vec::with_capacity(n);
                for _ in 0..n {
                    let read_f32s = |r: &mut BufReader<File>, n: usize| -> Result<Vec<f32>> {
                        let mut v = Vec::with_capacity(n);
                        for _ in 0..n {
                            v.push(read_f32(r)?);
                        }
                        Ok(v)
                    };
                    let states = read_f32s(&mut r, (traj_len + 1) * obs_dim)?;
                    let actions = read_f32s(&mut r, traj_len * act_dim)?;
                    let rewards = read_f32s(&mut r, traj_len)?;
                    let mut dones = Vec::with_capacity(traj_len);
                    for _ in 0..traj_len {
                        dones.push(read_u8(&mut r)? != 0);
                    }
                    trajs.push(VecTraj { obs_dim, act_dim, states, actions, rewards, dones });
                }
                DatasetPayload::Vector(trajs)
            }
            k => return Err(Error::Dataset(format!("unknown payload kind {k}"))),
        };
        let ds = OfflineDataset { env_id, policy, seed, traj_len, payload };
        ds.validate()?;
        Ok(ds)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::Dataset(format!("string field too long ({} bytes)", bytes.len())));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u16(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Dataset(format!("bad utf-8 in header: {e}")))
}

macro_rules! le_reader {
    ($name:ident, $ty:ty) => {
        fn $name<R: Read>(r: &mut R) -> Result<$ty> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            r.read_exact(&mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}
le_reader!(read_u16, u16);
le_reader!(read_u32, u32);
le_reader!(read_u64, u64);
le_reader!(read_f32, f32);

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}
