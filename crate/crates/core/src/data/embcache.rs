//! Embedding cache: little-endian f32 rows plus a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, EmbeddingVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    pub dim: usize,
    pub count: usize,
    pub model_hash: String,
    pub image_ids: Vec<String>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    rows: &[(String, EmbeddingVec)],
    model_hash: &str,
) -> Result<EmbeddingCache, DataError> {
    let path = path.as_ref();
    let dim = rows.first().map_or(0, |(_, e)| e.len());
    if let Some((id, e)) = rows.iter().find(|(_, e)| e.len() != dim) {
        return Err(DataError::CacheMismatch(format!(
            "{id} has length {} != {dim}",
            e.len()
        )));
    }
    let mut blob = Vec::with_capacity(rows.len() * dim * 4);
    for (_, e) in rows {
        for &v in e.values() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let meta = EmbeddingCache {
        dim,
        count: rows.len(),
        model_hash: model_hash.to_string(),
        image_ids: rows.iter().map(|(id, _)| id.clone()).collect(),
    };
    fs::write(path, blob)?;
    fs::write(sidecar(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingCache, Vec<EmbeddingVec>), DataError> {
    let path = path.as_ref();
    let meta: EmbeddingCache = serde_json::from_slice(&fs::read(sidecar(path))?)?;
    let blob = fs::read(path)?;
    if blob.len() != meta.dim * meta.count * 4 || meta.image_ids.len() != meta.count {
        return Err(DataError::CacheMismatch(format!(
            "{} bytes for {}x{} floats",
            blob.len(),
            meta.count,
            meta.dim
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let rows = if meta.dim == 0 {
        vec![EmbeddingVec::new(Vec::new())?; meta.count]
    } else {
        values
            .chunks_exact(meta.dim)
            .map(|c| EmbeddingVec::new(c.to_vec()))
            .collect::<Result<_, _>>()?
    };
    Ok((meta, rows))
}
