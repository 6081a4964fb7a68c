//! Checkpoints: `<prefix>.weights` (little-endian f64 blob) and
//! `<prefix>.json` (architecture descriptor, parameter table, hash, metadata).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ParamSpec, SegModel};
use crate::data::DataError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    pub config: ModelConfig,
    pub param_hash: String,
    pub param_count: usize,
    pub params: Vec<ParamSpec>,
    /// Free-form provenance (training domain, steps, losses, held-out VI).
    pub metadata: serde_json::Value,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn save_checkpoint(
    model: &SegModel,
    prefix: impl AsRef<Path>,
    metadata: serde_json::Value,
) -> Result<CheckpointDescriptor, ModelError> {
    let prefix = prefix.as_ref();
    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(DataError::from)?;
    }
    let desc = CheckpointDescriptor {
        config: model.config().clone(),
        param_hash: model.param_hash(),
        param_count: model.param_count(),
        params: model.param_specs().to_vec(),
        metadata,
    };
    let mut blob = Vec::with_capacity(model.param_count() * 8);
    for v in model.params() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(with_suffix(prefix, ".weights"), blob).map_err(DataError::from)?;
    let json = serde_json::to_vec_pretty(&desc).map_err(DataError::from)?;
    fs::write(with_suffix(prefix, ".json"), json).map_err(DataError::from)?;
    Ok(desc)
}

/// Loads and verifies the parameter hash. Optimizer state starts fresh.
pub fn load_checkpoint(prefix: impl AsRef<Path>) -> Result<(SegModel, CheckpointDescriptor), ModelError> {
    let prefix = prefix.as_ref();
    let json = fs::read(with_suffix(prefix, ".json")).map_err(DataError::from)?;
    let desc: CheckpointDescriptor = serde_json::from_slice(&json).map_err(DataError::from)?;
    let blob = fs::read(with_suffix(prefix, ".weights")).map_err(DataError::from)?;
    if blob.len() % 8 != 0 {
        return Err(ModelError::Checkpoint("weight blob length not a multiple of 8".into()));
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = SegModel::from_parts(desc.config.clone(), params)?;
    if model.param_hash() != desc.param_hash {
        return Err(ModelError::Checkpoint("parameter hash mismatch".into()));
    }
    Ok((model, desc))
}
