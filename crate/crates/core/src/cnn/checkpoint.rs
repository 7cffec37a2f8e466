//! Binary checkpoints.
//!
//! Layout: `"QCNN"`, version byte, 32-byte architecture hash, `u32` LE
//! manifest length, JSON manifest, then three blocks of LE `f64` (parameters,
//! first moments, second moments), each in [`PARAM_SHAPES`] order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, Architecture, CnnError, CnnModel, ParamSet, Result, PARAM_SHAPES};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"QCNN";
const VERSION: u8 = 1;
const PREFIX: usize = 4 + 1 + 32 + 4;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    input_size: usize,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

fn fmt_err(msg: impl Into<String>) -> CnnError {
    CnnError::Checkpoint(msg.into())
}

pub fn encode(model: &CnnModel, state: &AdamState) -> Vec<u8> {
    let manifest = Manifest {
        input_size: model.arch.input_size,
        adam_step: state.step,
        tensors: PARAM_SHAPES
            .iter()
            .map(|(name, shape)| TensorEntry {
                name: (*name).to_owned(),
                shape: shape.to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&model.arch.hash());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for set in [&model.params, &state.m, &state.v] {
        for v in set.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(CnnModel, AdamState)> {
    if bytes.len() < PREFIX || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fmt_err("missing QCNN magic or truncated header"));
    }
    if bytes[4] != VERSION {
        return Err(fmt_err(format!("unsupported version {}", bytes[4])));
    }
    let stored_hash: [u8; 32] = bytes[5..37].try_into().unwrap();
    let json_len = u32::from_le_bytes(bytes[37..41].try_into().unwrap()) as usize;
    let body_start = PREFIX
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt_err("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[PREFIX..body_start]).map_err(|e| fmt_err(format!("manifest: {e}")))?;

    let arch = Architecture::new(manifest.input_size)?;
    let layout_matches = manifest.tensors.len() == PARAM_SHAPES.len()
        && manifest
            .tensors
            .iter()
            .zip(PARAM_SHAPES)
            .all(|(t, (name, shape))| t.name == name && t.shape == shape);
    if !layout_matches || arch.hash() != stored_hash {
        return Err(fmt_err("architecture hash mismatch"));
    }

    let count = ParamSet::zeros().len();
    let body = &bytes[body_start..];
    if body.len() != 3 * 8 * count {
        return Err(fmt_err(format!(
            "expected {} payload bytes, found {}",
            3 * 8 * count,
            body.len()
        )));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next_set = || {
        let mut set = ParamSet::zeros();
        for (_, t) in set.tensors_mut() {
            for v in t.iter_mut() {
                *v = values.next().expect("length checked");
            }
        }
        set
    };
    let params = next_set();
    let m = next_set();
    let v = next_set();
    Ok((
        CnnModel { arch, params },
        AdamState {
            m,
            v,
            step: manifest.adam_step,
        },
    ))
}

pub fn save_checkpoint(model: &CnnModel, state: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, state)).map_err(|e| fmt_err(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CnnModel, AdamState)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| fmt_err(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

/// Loads a checkpoint and rejects it unless it was built for `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &Architecture) -> Result<(CnnModel, AdamState)> {
    let (model, state) = load_checkpoint(path)?;
    if model.arch.hash() != expected.hash() {
        return Err(fmt_err(format!(
            "architecture hash mismatch: checkpoint input {} vs expected {}",
            model.arch.input_size, expected.input_size
        )));
    }
    Ok((model, state))
}
