//! Versioned binary checkpoints: an 8-byte magic, a small TOML metadata
//! block, then named tensor blobs in parameter-registration order. Writing
//! is deterministic — the same parameters and metadata produce the same
//! bytes — and loading validates every length it reads.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::reward::NamedTensors;
use crate::Result;

const MAGIC: &[u8; 8] = b"LRLCKPT1";

/// What produced the blob and from which configuration; enough to reject a
/// checkpoint loaded into the wrong model shape before any tensor math.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// "dynamics" or "reward".
    pub module: String,
    /// "maze" or "continuous".
    pub domain: String,
    pub latent_dim: usize,
    pub lstm_hidden: usize,
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    params: &NamedTensors<f32>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| ckpt_err(path, &e.to_string()))?;
        }
    }
    let meta_text =
        toml::to_string(meta).map_err(|e| ckpt_err(path, &format!("metadata: {e}")))?;
    let mut buf = Vec::with_capacity(64 + params.iter().map(|(_, _, v)| 16 + 4 * v.len()).sum::<usize>());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_text.as_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, (rows, cols), values) in params {
        if values.len() != rows * cols {
            return Err(ckpt_err(path, &format!("{name}: {rows}x{cols} holds {} values", values.len())));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(*rows as u32).to_le_bytes());
        buf.extend_from_slice(&(*cols as u32).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // write-then-rename so an interrupted run never leaves a torn file
    let tmp = path.with_extension("ckpt.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| ckpt_err(&tmp, &e.to_string()))?;
    f.write_all(&buf).map_err(|e| ckpt_err(&tmp, &e.to_string()))?;
    f.sync_all().ok();
    drop(f);
    fs::rename(&tmp, path).map_err(|e| ckpt_err(path, &e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, NamedTensors<f32>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ckpt_err(path, &e.to_string()))?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            ckpt_err(path, &format!("truncated at byte {at} (wanted {n} more)"))
        })?;
        let s = &bytes[*at..end];
        *at = end;
        Ok(s)
    };
    if take(&mut at, 8)? != MAGIC {
        return Err(ckpt_err(path, "bad magic (not a checkpoint, or a newer format)"));
    }
    let meta_len = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let meta_text = std::str::from_utf8(take(&mut at, meta_len)?)
        .map_err(|_| ckpt_err(path, "metadata is not UTF-8"))?;
    let meta: CheckpointMeta =
        toml::from_str(meta_text).map_err(|e| ckpt_err(path, &format!("metadata: {e}")))?;
    let n_blobs = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
    let mut params = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| ckpt_err(path, "blob name is not UTF-8"))?
            .to_string();
        let rows = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| ckpt_err(path, "blob shape overflow"))?;
        let raw = take(&mut at, 4 * n)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push((name, (rows, cols), values));
    }
    if at != bytes.len() {
        return Err(ckpt_err(path, &format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok((meta, params))
}

/// Key the blobs by name for `ParamSet::load_named`.
pub fn blob_map(params: NamedTensors<f32>) -> HashMap<String, ((usize, usize), Vec<f32>)> {
    params.into_iter().map(|(name, shape, values)| (name, (shape, values))).collect()
}

fn ckpt_err(path: &Path, what: &str) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            module: "dynamics".into(),
            domain: "maze".into(),
            latent_dim: 16,
            lstm_hidden: 16,
            seed: 7,
            config_hash: "00ff00ff00ff00ff".into(),
            version: "v0.1.0+00ff00ff".into(),
        }
    }

    fn params() -> NamedTensors<f32> {
        vec![
            ("enc.l1.w".into(), (3, 2), vec![0.5, -1.25, 3.0, 0.0, f32::MIN_POSITIVE, 9.75]),
            ("enc.l1.b".into(), (1, 2), vec![0.0, -0.0]),
        ]
    }

    #[test]
    fn checkpoints_round_trip_values_and_metadata() {
        let dir = std::env::temp_dir().join(format!("ckpt-rt-{}", std::process::id()));
        let path = dir.join("nested/deeper/model.ckpt");
        save_checkpoint(&path, &meta(), &params()).unwrap();
        let (m, p) = load_checkpoint(&path).unwrap();
        assert_eq!(m, meta());
        assert_eq!(p, params());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn writing_twice_yields_identical_bytes() {
        let dir = std::env::temp_dir().join(format!("ckpt-det-{}", std::process::id()));
        let a = dir.join("a.ckpt");
        let b = dir.join("b.ckpt");
        save_checkpoint(&a, &meta(), &params()).unwrap();
        save_checkpoint(&b, &meta(), &params()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn corruption_is_reported_not_misread() {
        let dir = std::env::temp_dir().join(format!("ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        save_checkpoint(&path, &meta(), &params()).unwrap();
        let good = std::fs::read(&path).unwrap();

        let bad_magic = {
            let mut b = good.clone();
            b[0] ^= 0xff;
            b
        };
        let truncated = good[..good.len() - 3].to_vec();
        let mut trailing = good.clone();
        trailing.push(0);
        for bytes in [bad_magic, truncated, trailing] {
            std::fs::write(&path, &bytes).unwrap();
            let err = load_checkpoint(&path).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "got {err}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_files_error_cleanly() {
        let err = load_checkpoint("/definitely/not/here.ckpt").unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
