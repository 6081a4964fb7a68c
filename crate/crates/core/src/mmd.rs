//! Squared maximum mean discrepancy between embedded image sets, per-source
//! domain distance matrices and optimal source selection.
//!
//! Matrix orientation: row `i` names the embedding model (trained on domain
//! `i`) and the images of domain `i`; column `j` names the compared domain.
//! Entry `(i, j)` is therefore `mmd2(F_i(S_i), F_i(D_j))` and the matrix is
//! generally asymmetric.

use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_seed, DataError, DomainPool, EmbeddingVec, SeededRng};
use crate::model::{ModelError, SegModel};
use crate::numeric::{squared_distance, tree_sum};

pub const DEFAULT_SAMPLE_CAP: usize = 256;

#[derive(Debug, Error)]
pub enum MmdError {
    #[error("embedding lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("sample set is empty")]
    EmptySet,
    #[error("unbiased estimator needs at least 2 samples per set")]
    TooFewSamples,
    #[error("all pairwise distances are zero; median bandwidth undefined")]
    DegenerateDistances,
    #[error("no model supplied for domain {0}")]
    MissingModel(String),
    #[error("sample cap must be at least 2, got {0}")]
    InvalidSampleCap(usize),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("domain {0} is not in the matrix")]
    UnknownDomain(String),
    #[error("target {0} listed among candidates")]
    TargetIsCandidate(String),
    #[error("malformed distance matrix: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl MmdError {
    pub fn kind(&self) -> &'static str {
        match self {
            MmdError::LengthMismatch(..) => "LengthMismatch",
            MmdError::InvalidBandwidth(_) => "InvalidBandwidth",
            MmdError::EmptySet => "EmptySet",
            MmdError::TooFewSamples => "TooFewSamples",
            MmdError::DegenerateDistances => "DegenerateDistances",
            MmdError::MissingModel(_) => "MissingModel",
            MmdError::InvalidSampleCap(_) => "InvalidSampleCap",
            MmdError::EmptyCandidates => "EmptyCandidates",
            MmdError::UnknownDomain(_) => "UnknownDomain",
            MmdError::TargetIsCandidate(_) => "TargetIsCandidate",
            MmdError::Malformed(_) => "MalformedMatrix",
            MmdError::Model(e) => e.kind(),
            MmdError::Data(e) => e.kind(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance over the pooled sets.
    MedianHeuristic,
}

/// RBF kernel settings. RBF is the only kind offered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            bandwidth: Bandwidth::MedianHeuristic,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// V-statistic: non-negative, exactly zero on identical lists.
    #[default]
    Biased,
    /// U-statistic: unbiased, may dip slightly below zero.
    Unbiased,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdValue {
    pub value: f64,
    pub sigma: f64,
}

fn check_sigma(sigma: f64) -> Result<(), MmdError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(MmdError::InvalidBandwidth(sigma))
    }
}

/// `exp(-|x - y|^2 / (2 sigma^2))`.
pub fn rbf_kernel(x: &EmbeddingVec, y: &EmbeddingVec, sigma: f64) -> Result<f64, MmdError> {
    if x.len() != y.len() {
        return Err(MmdError::LengthMismatch(x.len(), y.len()));
    }
    check_sigma(sigma)?;
    Ok(rbf(x.values(), y.values(), sigma))
}

fn rbf(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    (-squared_distance(x, y) / (2.0 * sigma * sigma)).exp()
}

fn check_lengths(points: &[&EmbeddingVec]) -> Result<(), MmdError> {
    if let Some(first) = points.first() {
        for p in points {
            if p.len() != first.len() {
                return Err(MmdError::LengthMismatch(first.len(), p.len()));
            }
        }
    }
    Ok(())
}

fn median_of_refs(points: &[&EmbeddingVec]) -> Result<f64, MmdError> {
    check_lengths(points)?;
    if points.len() < 2 {
        return Err(MmdError::DegenerateDistances);
    }
    let mut d: Vec<f64> = (0..points.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            (i + 1..points.len()).map(move |j| squared_distance(points[i].values(), points[j].values()).sqrt())
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(MmdError::DegenerateDistances)
    }
}

/// Median of the Euclidean distances over all distinct index pairs.
pub fn median_heuristic(points: &[EmbeddingVec]) -> Result<f64, MmdError> {
    median_of_refs(&points.iter().collect::<Vec<_>>())
}

/// Sum of `k(a_i, b_j)` over all pairs, optionally skipping `i == j`.
/// Row sums are computed in parallel and reduced in a fixed tree order.
fn kernel_sum(a: &[EmbeddingVec], b: &[EmbeddingVec], sigma: f64, skip_diagonal: bool) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let terms: Vec<f64> = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !(skip_diagonal && *j == i))
                .map(|(_, y)| rbf(x.values(), y.values(), sigma))
                .collect();
            tree_sum(&terms)
        })
        .collect();
    tree_sum(&rows)
}

/// Squared MMD between two embedding sets.
pub fn mmd2(
    x: &[EmbeddingVec],
    y: &[EmbeddingVec],
    kernel: &KernelConfig,
    estimator: Estimator,
) -> Result<MmdValue, MmdError> {
    if x.is_empty() || y.is_empty() {
        return Err(MmdError::EmptySet);
    }
    if estimator == Estimator::Unbiased && (x.len() < 2 || y.len() < 2) {
        return Err(MmdError::TooFewSamples);
    }
    let pooled: Vec<&EmbeddingVec> = x.iter().chain(y).collect();
    check_lengths(&pooled)?;
    let sigma = match kernel.bandwidth {
        Bandwidth::Fixed(s) => {
            check_sigma(s)?;
            s
        }
        Bandwidth::MedianHeuristic => median_of_refs(&pooled)?,
    };
    let (n, m) = (x.len() as f64, y.len() as f64);
    let cross = kernel_sum(x, y, sigma, false) / (n * m);
    let value = match estimator {
        Estimator::Biased => {
            let v = kernel_sum(x, x, sigma, false) / (n * n) + kernel_sum(y, y, sigma, false) / (m * m) - 2.0 * cross;
            v.max(0.0)
        }
        Estimator::Unbiased => {
            kernel_sum(x, x, sigma, true) / (n * (n - 1.0)) + kernel_sum(y, y, sigma, true) / (m * (m - 1.0))
                - 2.0 * cross
        }
    };
    Ok(MmdValue { value, sigma })
}

/// Seed-deterministic subset of up to `cap` sample indices, in ascending order.
pub fn subsample_indices(len: usize, cap: usize, seed: u64) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    let mut rng = SeededRng::new(seed);
    let mut picked = index::sample(&mut rng, len, cap).into_vec();
    picked.sort_unstable();
    picked
}

/// Embeds the given samples of `pool` with `model`, in parallel.
pub fn embed_pool(model: &SegModel, pool: &DomainPool, indices: &[usize]) -> Result<Vec<EmbeddingVec>, MmdError> {
    indices
        .par_iter()
        .map(|&i| Ok(model.embed(&pool.sample(i)?.image)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub kernel: KernelConfig,
    pub estimator: Estimator,
    pub sample_cap: usize,
    pub seed: u64,
    pub orientation: String,
    /// Parameter hash of the model that embedded each row.
    pub embedders: Vec<String>,
    /// Bandwidth used for each entry.
    pub sigmas: Vec<Vec<f64>>,
}

pub const ORIENTATION: &str = "row = embedding model and its own domain, column = compared domain";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub names: Vec<String>,
    pub entries: Vec<Vec<f64>>,
    pub meta: Option<MatrixMeta>,
}

impl DistanceMatrix {
    pub fn new(names: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, MmdError> {
        let n = names.len();
        if n == 0 || entries.len() != n || entries.iter().any(|r| r.len() != n) {
            return Err(MmdError::Malformed(format!("expected a square {n}x{n} matrix")));
        }
        if entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MmdError::Malformed("non-finite entry".into()));
        }
        Ok(DistanceMatrix {
            names,
            entries,
            meta: None,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, MmdError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| MmdError::UnknownDomain(name.to_string()))
    }

    pub fn get(&self, row: &str, col: &str) -> Result<f64, MmdError> {
        Ok(self.entries[self.index_of(row)?][self.index_of(col)?])
    }

    /// CSV with the domain names as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("domain");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (name, row) in self.names.iter().zip(&self.entries) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, MmdError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| MmdError::Malformed(e.to_string()))?
            .clone();
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| MmdError::Malformed(e.to_string()))?;
            if record.get(0) != names.get(i).map(String::as_str) {
                return Err(MmdError::Malformed(format!("row {i} label does not match header")));
            }
            let row = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| MmdError::Malformed(format!("{s}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push(row);
        }
        DistanceMatrix::new(names, entries)
    }

    /// Writes `<path>` (CSV) and, when metadata is present, `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MmdError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(DataError::from)?;
        if let Some(meta) = &self.meta {
            let mut f = std::fs::File::create(sidecar(path)).map_err(DataError::from)?;
            serde_json::to_writer_pretty(&mut f, meta).map_err(DataError::from)?;
            f.write_all(b"\n").map_err(DataError::from)?;
        }
        Ok(())
    }

    /// Reads the CSV and its metadata sidecar if one exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MmdError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(DataError::from)?;
        let mut m = DistanceMatrix::from_csv(&text)?;
        let side = sidecar(path);
        if side.exists() {
            let bytes = std::fs::read(side).map_err(DataError::from)?;
            m.meta = Some(serde_json::from_slice(&bytes).map_err(DataError::from)?);
        }
        Ok(m)
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Settings for [`domain_distance_matrix`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub kernel: KernelConfig,
    pub estimator: Estimator,
    pub sample_cap: usize,
    pub seed: u64,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            kernel: KernelConfig::default(),
            estimator: Estimator::Biased,
            sample_cap: DEFAULT_SAMPLE_CAP,
            seed: 0,
        }
    }
}

/// Full asymmetric distance matrix. `models[i]` is the model pretrained on
/// `domains[i]`. Each domain is subsampled once (seeded by its column index) so
/// that every row compares the same image sets.
pub fn domain_distance_matrix(
    domains: &[DomainPool],
    models: &[&SegModel],
    cfg: &MatrixConfig,
) -> Result<DistanceMatrix, MmdError> {
    if cfg.sample_cap < 2 {
        return Err(MmdError::InvalidSampleCap(cfg.sample_cap));
    }
    if domains.is_empty() {
        return Err(MmdError::EmptySet);
    }
    if models.len() < domains.len() {
        return Err(MmdError::MissingModel(domains[models.len()].name().to_string()));
    }
    let subsets: Vec<Vec<usize>> = domains
        .iter()
        .enumerate()
        .map(|(j, d)| subsample_indices(d.len(), cfg.sample_cap, derive_seed(cfg.seed, j as u64)))
        .collect();
    let n = domains.len();
    let mut entries = vec![vec![0.0; n]; n];
    let mut sigmas = vec![vec![0.0; n]; n];
    for i in 0..n {
        let embedded: Vec<Vec<EmbeddingVec>> = domains
            .iter()
            .zip(&subsets)
            .map(|(d, s)| embed_pool(models[i], d, s))
            .collect::<Result<_, _>>()?;
        let row: Vec<MmdValue> = (0..n)
            .into_par_iter()
            .map(|j| mmd2(&embedded[i], &embedded[j], &cfg.kernel, cfg.estimator))
            .collect::<Result<_, _>>()?;
        for (j, v) in row.into_iter().enumerate() {
            entries[i][j] = v.value;
            sigmas[i][j] = v.sigma;
        }
    }
    let mut m = DistanceMatrix::new(domains.iter().map(|d| d.name().to_string()).collect(), entries)?;
    m.meta = Some(MatrixMeta {
        kernel: cfg.kernel,
        estimator: cfg.estimator,
        sample_cap: cfg.sample_cap,
        seed: cfg.seed,
        orientation: ORIENTATION.to_string(),
        embedders: models[..n].iter().map(|m| m.param_hash()).collect(),
        sigmas,
    });
    Ok(m)
}

fn check_candidates(matrix: &DistanceMatrix, target: &str, candidates: &[String]) -> Result<(), MmdError> {
    if candidates.is_empty() {
        return Err(MmdError::EmptyCandidates);
    }
    matrix.index_of(target)?;
    for c in candidates {
        if c == target {
            return Err(MmdError::TargetIsCandidate(c.clone()));
        }
        matrix.index_of(c)?;
    }
    Ok(())
}

/// Candidate whose row has the smallest distance to `target`; the first
/// candidate in declared order wins ties.
pub fn select_optimal_source(matrix: &DistanceMatrix, target: &str, candidates: &[String]) -> Result<String, MmdError> {
    pick_source(matrix, target, candidates, |d, best| d < best)
}

/// Candidate with the largest distance to `target`, ties by declared order.
pub fn select_farthest_source(
    matrix: &DistanceMatrix,
    target: &str,
    candidates: &[String],
) -> Result<String, MmdError> {
    pick_source(matrix, target, candidates, |d, best| d > best)
}

fn pick_source(
    matrix: &DistanceMatrix,
    target: &str,
    candidates: &[String],
    better: impl Fn(f64, f64) -> bool,
) -> Result<String, MmdError> {
    check_candidates(matrix, target, candidates)?;
    let mut best = &candidates[0];
    let mut best_d = matrix.get(best, target)?;
    for c in &candidates[1..] {
        let d = matrix.get(c, target)?;
        if better(d, best_d) {
            best = c;
            best_d = d;
        }
    }
    Ok(best.clone())
}
