//! Single-file checkpoint archives.
//!
//! An archive is a JSON document holding the [`NetSpec`], the sharing
//! registry, every parameter storage keyed by its `group/name` key with a
//! SHA-256 of its little-endian bytes, and optionally the trainer state
//! (step, batch positions and Adam moments) under its own checksum. Tensor
//! bytes are stored as hex so values survive bit for bit.

use std::fs;
use std::path::Path;

use msgan_core::networks::{build_models, NetSpec, ParameterGroups, Pipelines, SharingRegistry};
use msgan_core::trainer::{TrainConfig, TrainState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const FORMAT: &str = "msgan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    owners: Vec<String>,
    shape: Vec<usize>,
    sha256: String,
    data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StateEntry {
    sha256: String,
    state: TrainState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    net_spec: NetSpec,
    num_sources: usize,
    registry: SharingRegistry,
    config: TrainConfig,
    /// Free-form provenance, e.g. the run label and its accuracy.
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    train_state: Option<StateEntry>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub label: String,
    pub step: u64,
    /// Target accuracy measured when the checkpoint was written, if any.
    pub accuracy: Option<f64>,
}

/// A restored archive.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParameterGroups,
    pub config: TrainConfig,
    pub state: Option<TrainState>,
    pub meta: CheckpointMeta,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn tensor_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn state_bytes(state: &TrainState) -> Vec<u8> {
    serde_json::to_vec(state).expect("train state serializes")
}

/// Writes `params` (and `state`, when resuming should be possible) to
/// `path`, replacing any existing file atomically.
pub fn save(
    path: &Path,
    params: &ParameterGroups,
    config: &TrainConfig,
    state: Option<&TrainState>,
    meta: CheckpointMeta,
) -> Result<()> {
    let tensors = (0..params.storage_count())
        .map(|s| {
            let bytes = tensor_bytes(params.tensor(s).data());
            TensorEntry {
                key: params.storage_key(s).to_string(),
                owners: params.storage_owners(s).iter().map(|g| g.name()).collect(),
                shape: params.tensor(s).shape().to_vec(),
                sha256: sha_hex(&bytes),
                data: hex::encode(&bytes),
            }
        })
        .collect();
    let archive = Archive {
        format: FORMAT.into(),
        version: VERSION,
        net_spec: params.spec().clone(),
        num_sources: params.num_sources(),
        registry: params.registry().clone(),
        config: config.clone(),
        meta,
        tensors,
        train_state: state.map(|s| StateEntry {
            sha256: sha_hex(&state_bytes(s)),
            state: s.clone(),
        }),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let json = serde_json::to_vec(&archive).expect("archive serializes");
    fs::write(&tmp, json).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

fn integrity(tensor: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Integrity {
        tensor: tensor.into(),
        detail: detail.into(),
    }
}

/// Reads and verifies an archive. With `expected` set, the stored
/// architecture must match it exactly.
pub fn load(path: &Path, expected: Option<&NetSpec>) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    let archive: Archive = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("not a checkpoint archive: {e}"),
    })?;
    if archive.format != FORMAT || archive.version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported archive {} v{}", archive.format, archive.version),
        });
    }
    if let Some(spec) = expected {
        if *spec != archive.net_spec {
            return Err(integrity(
                "net_spec",
                format!("archive was written for {:?}, expected {:?}", archive.net_spec, spec),
            ));
        }
    }
    let mut params = build_models(&archive.net_spec, archive.num_sources, 0)
        .map_err(|e| integrity("net_spec", e.to_string()))?;
    if *params.registry() != archive.registry {
        return Err(integrity("registry", "sharing registry does not match the architecture"));
    }
    let mut seen = vec![false; params.storage_count()];
    for entry in &archive.tensors {
        let s = params
            .storage_index(&entry.key)
            .ok_or_else(|| integrity(&entry.key, "no such tensor in the architecture"))?;
        let raw = hex::decode(&entry.data).map_err(|e| integrity(&entry.key, format!("payload is not valid hex: {e}")))?;
        if sha_hex(&raw) != entry.sha256 {
            return Err(integrity(&entry.key, "checksum mismatch"));
        }
        if entry.shape != params.tensor(s).shape() || raw.len() != 8 * params.tensor(s).len() {
            return Err(integrity(
                &entry.key,
                format!("shape {:?} does not match {:?}", entry.shape, params.tensor(s).shape()),
            ));
        }
        let dst = params.tensor_mut(s).data_mut();
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        seen[s] = true;
    }
    if let Some(s) = seen.iter().position(|&v| !v) {
        return Err(integrity(params.storage_key(s), "missing from the archive"));
    }
    let state = match archive.train_state {
        Some(entry) => {
            if sha_hex(&state_bytes(&entry.state)) != entry.sha256 {
                return Err(integrity("train_state", "checksum mismatch"));
            }
            Some(entry.state)
        }
        None => None,
    };
    Ok(Checkpoint {
        params,
        config: archive.config,
        state,
        meta: archive.meta,
    })
}
