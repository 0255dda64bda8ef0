//! Metrics persistence: the per-episode CSV every training scenario writes,
//! the per-epoch loss CSV from offline pretraining, and the per-run record
//! file. Formatting goes through Rust's shortest-round-trip float printing,
//! so a deterministic run writes byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::LossParts;
use crate::error::Error;
use crate::reward::EpisodeRow;
use crate::Result;

/// Episode log columns. The trailing `planner_depth` column appears only on
/// tree-search runs, so a depth-0 run's file is indistinguishable from plain
/// reward training.
pub fn episode_csv(rows: &[EpisodeRow], with_depth: bool) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str("global_episode,worker_id,steps,undiscounted_return,actor_loss,critic_loss,entropy");
    if with_depth {
        out.push_str(",planner_depth");
    }
    out.push('\n');
    let mut last = 0u64;
    for r in rows {
        assert!(r.global_episode > last, "episode log must be monotone in global_episode");
        last = r.global_episode;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.global_episode,
            r.worker,
            r.steps,
            r.undiscounted_return,
            r.actor_loss,
            r.critic_loss,
            r.entropy
        );
        if with_depth {
            let _ = write!(out, ",{}", r.plan_depth.unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

pub fn write_episode_csv(path: impl AsRef<Path>, rows: &[EpisodeRow], with_depth: bool) -> Result<()> {
    write_text(path.as_ref(), &episode_csv(rows, with_depth))
}

/// Pretraining loss curve; one row per epoch in order.
pub fn loss_csv(log: &[LossParts]) -> String {
    let mut out = String::with_capacity(48 * (log.len() + 1));
    out.push_str("epoch,recon,state,for,inv,total\n");
    for (epoch, p) in log.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            epoch, p.recon, p.state, p.forward, p.inverse, p.total
        );
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, log: &[LossParts]) -> Result<()> {
    write_text(path.as_ref(), &loss_csv(log))
}

/// Read back the two columns plots and summaries need.
pub fn read_episode_returns(path: impl AsRef<Path>) -> Result<Vec<(u64, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let ep_idx = cols.iter().position(|c| *c == "global_episode");
    let ret_idx = cols.iter().position(|c| *c == "undiscounted_return");
    let (ep_idx, ret_idx) = match (ep_idx, ret_idx) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Dataset(format!(
                "{}: not an episode log (header: {header})",
                path.display()
            )))
        }
    };
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<&str> {
            fields.get(i).copied().ok_or_else(|| {
                Error::Dataset(format!("{}: row {} is short", path.display(), n + 2))
            })
        };
        let ep = parse(ep_idx)?
            .parse::<u64>()
            .map_err(|e| Error::Dataset(format!("{}: row {}: {e}", path.display(), n + 2)))?;
        let ret = parse(ret_idx)?
            .parse::<f64>()
            .map_err(|e| Error::Dataset(format!("{}: row {}: {e}", path.display(), n + 2)))?;
        out.push((ep, ret));
    }
    Ok(out)
}

/// Mean of the final `window` returns (or all of them if fewer).
pub fn final_window_mean(returns: &[f64], window: usize) -> f64 {
    if returns.is_empty() {
        return f64::NAN;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// First global episode (1-based) at which the trailing-`window` mean
/// reaches `threshold`; the window must be full before it counts.
pub fn episodes_to_threshold(returns: &[f64], window: usize, threshold: f64) -> Option<u64> {
    if returns.len() < window || window == 0 {
        return None;
    }
    let mut sum: f64 = returns[..window].iter().sum();
    if sum / window as f64 >= threshold {
        return Some(window as u64);
    }
    for i in window..returns.len() {
        sum += returns[i] - returns[i - window];
        if sum / window as f64 >= threshold {
            return Some(i as u64 + 1);
        }
    }
    None
}

/// One scenario run, summarized. `metrics` carries scenario-specific
/// numbers (final returns, probe accuracies, …) sorted by key so the file
/// is deterministic up to wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
    pub wall_clock_s: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).expect("record serialization is infallible");
        write_text(path.as_ref(), &text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}
