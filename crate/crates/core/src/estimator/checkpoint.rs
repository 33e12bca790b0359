//! Checkpoint container.
//!
//! ```text
//! "PGCK" | u32 version=1 | u32 meta_len | meta JSON (meta_len bytes)
//!        | u64 n_params | n_params × f64 (declaration order)
//! ```
//! Little-endian throughout. Adam moments are not stored.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EstimatorError, LogBase, ModelConfig, Network, Result};
use crate::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub loss_log_base: LogBase,
    pub step: u64,
    pub parameters: Vec<(String, Vec<usize>)>,
}

pub fn write_checkpoint<T: Scalar>(
    net: &Network<T>,
    loss_log_base: LogBase,
    path: impl AsRef<Path>,
) -> Result<()> {
    let p = net.params();
    let meta = CheckpointMeta {
        model: net.config().clone(),
        loss_log_base,
        step: p.step,
        parameters: p.slots().iter().map(|s| (s.name.clone(), s.shape.clone())).collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(p.len() as u64).to_le_bytes())?;
    for v in &p.values {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(Network<T>, CheckpointMeta)> {
    let mut bytes = vec![];
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| EstimatorError::Checkpoint(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing PGCK magic"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if u32_at(4) != VERSION {
        return Err(bad("unsupported version"));
    }
    let meta_len = u32_at(8) as usize;
    let meta_end = 12 + meta_len;
    if bytes.len() < meta_end + 8 {
        return Err(bad("truncated header"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[12..meta_end])?;
    let n = u64::from_le_bytes(bytes[meta_end..meta_end + 8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[meta_end + 8..];
    if body.len() != n * 8 {
        return Err(bad("parameter block length mismatch"));
    }
    let values: Vec<T> = body
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    let mut net = Network::from_parts(meta.model.clone(), values)?;
    let layout: Vec<(String, Vec<usize>)> = net
        .params()
        .slots()
        .iter()
        .map(|s| (s.name.clone(), s.shape.clone()))
        .collect();
    if layout != meta.parameters {
        return Err(bad("parameter layout does not match the model config"));
    }
    net.params_mut().step = meta.step;
    Ok((net, meta))
}
