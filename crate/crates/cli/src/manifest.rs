//! Run manifests: resolved config, seeds and content hashes of every input.
//! Nothing time- or host-dependent is recorded, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    /// `sha256("blob <len>\0" ++ bytes)` for files; for directories the same
    /// over a sorted `<relative path> <hash>` listing prefixed with `tree`.
    pub hash: String,
}

#[derive(Debug, Serialize)]
pub struct CommandManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

fn object_hash(kind: &str, bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind} {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn hash_path(path: &Path) -> CliResult<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        files_under(path, &mut files)?;
        files.sort();
        let mut listing = String::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            listing.push_str(&format!("{rel} {}\n", object_hash("blob", &fs::read(&f)?)));
        }
        Ok(object_hash("tree", listing.as_bytes()))
    } else {
        Ok(object_hash("blob", &fs::read(path)?))
    }
}

impl CommandManifest {
    pub fn new(command: &'static str, config: impl Serialize, seeds: Vec<u64>) -> CliResult<Self> {
        Ok(CommandManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<&mut Self> {
        self.inputs.push(InputHash {
            path: path.to_string_lossy().into_owned(),
            hash: hash_path(path)?,
        });
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_string_lossy().into_owned());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}
