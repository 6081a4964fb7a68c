//! Run manifests: JSON record of configuration, seeds and per-seed VI, with a
//! CSV mirror of the raw rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;
use crate::numeric::{mean, sample_std};

/// Standard deviation convention used for every aggregate.
pub const STD_CONVENTION: &str = "sample (n-1 denominator)";

/// One evaluated run: column order is the CSV contract.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub target: String,
    pub method: String,
    pub transfer_domain: String,
    pub sample_size: usize,
    pub seed: u64,
    pub vi_split: f64,
    pub vi_merge: f64,
    pub vi_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub target: String,
    pub method: String,
    pub transfer_domain: String,
    pub sample_size: usize,
    pub n: usize,
    pub mean_vi_total: f64,
    pub std_vi_total: f64,
    pub mean_vi_split: f64,
    pub mean_vi_merge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub std_convention: String,
    pub results: Vec<RunResult>,
    pub aggregates: Vec<AggregateRow>,
}

type GroupKey = (String, String, String, usize);

fn groups(results: &[RunResult]) -> BTreeMap<GroupKey, Vec<&RunResult>> {
    let mut map: BTreeMap<GroupKey, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        map.entry((
            r.target.clone(),
            r.method.clone(),
            r.transfer_domain.clone(),
            r.sample_size,
        ))
        .or_default()
        .push(r);
    }
    map
}

/// Mean ± sample std per (target, method, transfer domain, sample size),
/// with seeds visited in ascending order.
pub fn aggregate(results: &[RunResult]) -> Vec<AggregateRow> {
    groups(results)
        .into_iter()
        .map(|((target, method, transfer_domain, sample_size), mut rows)| {
            rows.sort_by_key(|r| r.seed);
            let total: Vec<f64> = rows.iter().map(|r| r.vi_total).collect();
            let split: Vec<f64> = rows.iter().map(|r| r.vi_split).collect();
            let merge: Vec<f64> = rows.iter().map(|r| r.vi_merge).collect();
            AggregateRow {
                target,
                method,
                transfer_domain,
                sample_size,
                n: rows.len(),
                mean_vi_total: mean(&total),
                std_vi_total: sample_std(&total),
                mean_vi_split: mean(&split),
                mean_vi_merge: mean(&merge),
            }
        })
        .collect()
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn csv_path(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Write `path` (JSON) and its `.csv` mirror. Every result group must cover
/// the same seed set.
pub fn write_run_manifest<C: Serialize>(
    config: &C,
    results: &[RunResult],
    path: impl AsRef<Path>,
) -> Result<RunManifest, DataError> {
    let path = path.as_ref();
    if results.is_empty() {
        return Err(DataError::EmptyRun);
    }
    let seeds: BTreeSet<u64> = results.iter().map(|r| r.seed).collect();
    for (key, rows) in groups(results) {
        let got: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
        if got != seeds || rows.len() != seeds.len() {
            return Err(DataError::IncompleteRun(format!(
                "{}/{}/{}/S{} has seeds {:?}, expected {:?}",
                key.0, key.1, key.2, key.3, got, seeds
            )));
        }
    }
    let config = serde_json::to_value(config)?;
    let manifest = RunManifest {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: sha256_hex(&serde_json::to_vec(&config)?),
        config,
        seeds: seeds.into_iter().collect(),
        std_convention: STD_CONVENTION.to_string(),
        results: results.to_vec(),
        aggregates: aggregate(results),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
    let mut w = csv::Writer::from_path(csv_path(path))?;
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(manifest)
}

pub fn read_run_manifest(path: impl AsRef<Path>) -> Result<RunManifest, DataError> {
    let bytes = fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, vi: f64) -> RunResult {
        RunResult {
            target: "t".into(),
            method: "scratch".into(),
            transfer_domain: String::new(),
            sample_size: 4,
            seed,
            vi_split: vi / 2.0,
            vi_merge: vi / 2.0,
            vi_total: vi,
        }
    }

    #[test]
    fn three_seeds_mean_and_sample_std() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        let results = vec![row(1, 0.5), row(2, 0.6), row(3, 0.7)];
        let m = write_run_manifest(&serde_json::json!({"a": 1}), &results, &path).unwrap();
        assert_eq!(m.aggregates.len(), 1);
        assert!((m.aggregates[0].mean_vi_total - 0.6).abs() < 1e-12);
        assert!((m.aggregates[0].std_vi_total - 0.1).abs() < 1e-12);
        assert_eq!(m.seeds, vec![1, 2, 3]);

        let back = read_run_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(aggregate(&back.results), m.aggregates);

        let csv = fs::read_to_string(path.with_extension("csv")).unwrap();
        assert!(csv.starts_with("target,method,transfer_domain,sample_size,seed,vi_split,vi_merge,vi_total\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn empty_and_incomplete_runs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        assert!(matches!(write_run_manifest(&(), &[], &path), Err(DataError::EmptyRun)));
        let mut other = row(1, 0.4);
        other.sample_size = 8;
        let results = vec![row(1, 0.5), row(2, 0.6), other];
        assert!(matches!(
            write_run_manifest(&(), &results, &path),
            Err(DataError::IncompleteRun(_))
        ));
    }

    #[test]
    fn config_hash_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_run_manifest(
            &serde_json::json!({"x": 1, "y": 2}),
            &[row(1, 0.1)],
            dir.path().join("a.json"),
        )
        .unwrap();
        let b = write_run_manifest(
            &serde_json::json!({"y": 2, "x": 1}),
            &[row(1, 0.1)],
            dir.path().join("b.json"),
        )
        .unwrap();
        assert_eq!(a.config_hash, b.config_hash);
    }
}
