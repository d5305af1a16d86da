//! Self-describing model checkpoints.
//!
//! Layout: 8-byte magic `WFCKPT01`, little-endian u32 header length, a JSON
//! header (metadata plus the full tensor table), the raw little-endian f32
//! payload — trainable tensors in visitor order, then normalization running
//! statistics — and a trailing SHA-256 over everything before it.
//!
//! The header embeds a hash of the architecture's tensor table; loading
//! rebuilds the model from the recorded architecture and refuses weights
//! whose table does not match, so a checkpoint can never be poured into
//! the wrong network.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::NormStats;
use crate::error::{Error, Result};

use super::arch::{build_model, AnyModel, Arch};
use super::HasParams;

const MAGIC: &[u8; 8] = b"WFCKPT01";

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: Arch,
    pub fold: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<Option<f64>>,
    pub val_runs: Vec<String>,
    /// Channel statistics the training fold was normalized with; inference
    /// must apply the same transform.
    pub norm: NormStats,
    pub class_names: Vec<String>,
    /// Hash of the experiment configuration that produced this model.
    pub config_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    dtype: String,
    spec_sha256: String,
    params: Vec<TensorInfo>,
    states: Vec<TensorInfo>,
}

fn corrupt(path: &Path, detail: impl Into<String>) -> Error {
    Error::CorruptArtifact {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Tensor tables of a model, in visitor order.
fn tensor_tables(model: &mut AnyModel<f32>) -> (Vec<TensorInfo>, Vec<TensorInfo>) {
    let mut params = Vec::new();
    model.for_each_param(&mut |p| {
        params.push(TensorInfo {
            name: p.name.to_string(),
            shape: p.value.shape().to_vec(),
        });
    });
    let mut states = Vec::new();
    model.for_each_state(&mut |name, v| {
        states.push(TensorInfo {
            name: name.to_string(),
            shape: v.shape().to_vec(),
        });
    });
    (params, states)
}

/// Architecture fingerprint: the arch name plus its full tensor table.
fn spec_sha(arch: Arch, params: &[TensorInfo], states: &[TensorInfo]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(arch.name().as_bytes());
    for t in params.iter().chain(states) {
        hasher.update(t.name.as_bytes());
        for &d in &t.shape {
            hasher.update((d as u64).to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    model: &mut AnyModel<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    if meta.arch != model.arch() {
        return Err(Error::invalid(format!(
            "metadata says {} but the model is {}",
            meta.arch,
            model.arch()
        )));
    }
    let (params, states) = tensor_tables(model);
    let header = Header {
        meta: meta.clone(),
        dtype: "f32".to_string(),
        spec_sha256: spec_sha(meta.arch, &params, &states),
        params,
        states,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::invalid(format!("unserializable header: {e}")))?;
    let mut bytes = Vec::with_capacity(header_json.len() + 64);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    model.for_each_param(&mut |p| {
        for &v in p.value.as_slice().expect("standard layout") {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    model.for_each_state(&mut |_, v| {
        for &v in v.as_slice().expect("standard layout") {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(AnyModel<f32>, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(corrupt(path, "file shorter than any valid checkpoint"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt(path, "bad magic; not a checkpoint file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(corrupt(path, "checksum mismatch"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload_start = 12 + header_len;
    if payload_start > body.len() {
        return Err(corrupt(path, "truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[12..payload_start])
        .map_err(|e| corrupt(path, format!("unreadable header: {e}")))?;
    if header.dtype != "f32" {
        return Err(corrupt(path, format!("unsupported dtype {}", header.dtype)));
    }

    let mut model = build_model::<f32>(header.meta.arch, 0);
    let (params, states) = tensor_tables(&mut model);
    let expected_sha = spec_sha(header.meta.arch, &params, &states);
    if expected_sha != header.spec_sha256 {
        return Err(corrupt(
            path,
            format!(
                "architecture spec hash mismatch: file {} vs {} for {}",
                header.spec_sha256,
                expected_sha,
                header.meta.arch
            ),
        ));
    }

    let n_scalars: usize = params
        .iter()
        .chain(&states)
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let payload = &body[payload_start..];
    if payload.len() != n_scalars * 4 {
        return Err(corrupt(
            path,
            format!("payload holds {} bytes, expected {}", payload.len(), n_scalars * 4),
        ));
    }

    let mut offset = 0usize;
    let mut fill = |dst: &mut [f32]| {
        for v in dst.iter_mut() {
            *v = f32::from_le_bytes(payload[offset..offset + 4].try_into().unwrap());
            offset += 4;
        }
    };
    model.for_each_param(&mut |mut p| fill(p.value.as_slice_mut().expect("standard layout")));
    model.for_each_state(&mut |_, mut v| fill(v.as_slice_mut().expect("standard layout")));
    Ok((model, header.meta))
}
