//! Binary checkpoint: an 8-byte magic, a little-endian `u32` version, a `u64`
//! header length, a JSON header, then raw little-endian `f64` blocks.
//!
//! Blocks follow the header's `blocks` list (coefficient matrices row-major),
//! then the loss trace, then (if present) the first and second optimizer
//! moments of every block.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{build_model, ParamBlock};
use super::train::TrainState;
use super::ModelConfig;
use crate::numerics::OptimizerState;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DRGSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub samples: usize,
    pub blocks: Vec<BlockEntry>,
    pub epochs_done: usize,
    /// Adam step counters, one per block; empty when moments were not saved.
    pub optimizer_steps: Vec<u64>,
}

fn write_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(state: &TrainState, with_moments: bool) -> Result<Vec<u8>> {
    let model = &state.model;
    let blocks: Vec<ParamBlock> = model.param_blocks();
    let header = CheckpointHeader {
        config: model.config.clone(),
        samples: model.samples,
        blocks: blocks
            .iter()
            .map(|b| BlockEntry {
                name: b.name.clone(),
                len: b.len,
            })
            .collect(),
        epochs_done: state.epochs_done(),
        optimizer_steps: if with_moments {
            state.optimizers.iter().map(|o| o.step).collect()
        } else {
            Vec::new()
        },
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for values in model.param_values() {
        write_f64s(&mut out, &values);
    }
    write_f64s(&mut out, &state.loss_trace);
    if with_moments {
        for o in &state.optimizers {
            write_f64s(&mut out, &o.first_moment);
        }
        for o in &state.optimizers {
            write_f64s(&mut out, &o.second_moment);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64s(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(len.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} too large")))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(cur.take(8, "header length")?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| Error::Format("header length overflows".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(cur.take(hlen, "header")?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut model = build_model(&header.config, header.samples)?;
    let expected = model.param_blocks();
    if expected.len() != header.blocks.len()
        || expected.iter().zip(&header.blocks).any(|(a, b)| a.name != b.name || a.len != b.len)
    {
        return Err(Error::Format("checkpoint block layout does not match its configuration".into()));
    }
    let values = expected
        .iter()
        .map(|b| cur.f64s(b.len, &b.name))
        .collect::<Result<Vec<_>>>()?;
    model.set_param_values(&values)?;
    if let Some(i) = model.coeffs.iter().position(|w| (0..w.nrows()).any(|k| w[(k, k)] != 0.0)) {
        return Err(Error::Format(format!("coeff{i} has a nonzero diagonal")));
    }
    let loss_trace = cur.f64s(header.epochs_done, "loss trace")?;
    let mut state = TrainState::new(model);
    state.loss_trace = loss_trace;
    if !header.optimizer_steps.is_empty() {
        if header.optimizer_steps.len() != expected.len() {
            return Err(Error::Format("optimizer step count does not match blocks".into()));
        }
        let first = expected
            .iter()
            .map(|b| cur.f64s(b.len, "first moment"))
            .collect::<Result<Vec<_>>>()?;
        let second = expected
            .iter()
            .map(|b| cur.f64s(b.len, "second moment"))
            .collect::<Result<Vec<_>>>()?;
        let cfg = header.config.optimizer;
        state.optimizers = first
            .into_iter()
            .zip(second)
            .zip(&header.optimizer_steps)
            .map(|((m, v), &step)| OptimizerState {
                step,
                first_moment: m,
                second_moment: v,
                config: cfg,
            })
            .collect();
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - cur.pos)));
    }
    Ok(state)
}

/// Writes parameters, loss trace and optimizer moments.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let bytes = encode_checkpoint(state, true)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
