//! Batch selection over the unlabeled pool: random, uncertainty-ranked
//! (min, max, median), BADGE-style gradient embeddings with k-means++ seeding,
//! and CLUE-style uncertainty-weighted k-means.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DomainPool, SeededRng};
use crate::model::{ModelError, SegModel};
use crate::numeric::squared_distance;
use crate::uncertainty::{rank_pool_by_uncertainty, UncertaintyConfig, UncertaintyError, UncertaintyScore};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("batch size must be at least 1")]
    InvalidBatch,
    #[error("requested {requested} samples but only {available} are unlabeled")]
    PoolExhausted { requested: usize, available: usize },
    #[error("unknown sampler {0:?}")]
    UnknownSampler(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl SamplingError {
    pub fn kind(&self) -> &'static str {
        match self {
            SamplingError::InvalidBatch => "InvalidBatch",
            SamplingError::PoolExhausted { .. } => "PoolExhausted",
            SamplingError::UnknownSampler(_) => "UnknownSampler",
            SamplingError::Uncertainty(e) => e.kind(),
            SamplingError::Model(e) => e.kind(),
            SamplingError::Data(e) => e.kind(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Random,
    #[serde(rename = "min-unc")]
    MinUncertainty,
    #[serde(rename = "max-unc")]
    MaxUncertainty,
    #[serde(rename = "median-unc")]
    MedianUncertainty,
    Badge,
    Clue,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 6] = [
        SamplerKind::Random,
        SamplerKind::MinUncertainty,
        SamplerKind::MaxUncertainty,
        SamplerKind::MedianUncertainty,
        SamplerKind::Badge,
        SamplerKind::Clue,
    ];

    /// Short name used on the command line and in result tables.
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Random => "random",
            SamplerKind::MinUncertainty => "min-unc",
            SamplerKind::MaxUncertainty => "max-unc",
            SamplerKind::MedianUncertainty => "median-unc",
            SamplerKind::Badge => "badge",
            SamplerKind::Clue => "clue",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            SamplerKind::Random => "Random",
            SamplerKind::MinUncertainty => "Min-Uncertainty",
            SamplerKind::MaxUncertainty => "Max-Uncertainty",
            SamplerKind::MedianUncertainty => "Median-Uncertainty",
            SamplerKind::Badge => "BADGE",
            SamplerKind::Clue => "CLUE",
        }
    }

    pub fn strategy(self) -> &'static str {
        match self {
            SamplerKind::Random => "Random",
            SamplerKind::MinUncertainty | SamplerKind::MaxUncertainty | SamplerKind::MedianUncertainty => "Uncertainty",
            SamplerKind::Badge | SamplerKind::Clue => "Uncertainty + Diversity",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "random" => SamplerKind::Random,
            "min-unc" | "min-uncertainty" => SamplerKind::MinUncertainty,
            "max-unc" | "max-uncertainty" => SamplerKind::MaxUncertainty,
            "median-unc" | "median-uncertainty" => SamplerKind::MedianUncertainty,
            "badge" => SamplerKind::Badge,
            "clue" => SamplerKind::Clue,
            other => return Err(SamplingError::UnknownSampler(other.to_string())),
        })
    }
}

/// Lloyd iteration cap for the weighted k-means of [`SamplerKind::Clue`].
pub const KMEANS_MAX_ITERS: usize = 50;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Pool indices in pick order.
    pub indices: Vec<usize>,
    pub warning: Option<String>,
}

/// Selects `k` distinct unlabeled samples from `pool`.
pub fn sample(
    kind: SamplerKind,
    model: &SegModel,
    pool: &DomainPool,
    k: usize,
    ucfg: &UncertaintyConfig,
    seed: u64,
) -> Result<Selection, SamplingError> {
    let candidates: Vec<usize> = pool.unlabeled_ids().iter().copied().collect();
    if k == 0 {
        return Err(SamplingError::InvalidBatch);
    }
    if k > candidates.len() {
        return Err(SamplingError::PoolExhausted {
            requested: k,
            available: candidates.len(),
        });
    }
    let plain = |indices| Selection { indices, warning: None };
    match kind {
        SamplerKind::Random => {
            let mut rng = SeededRng::new(seed);
            let picks = index::sample(&mut rng, candidates.len(), k);
            Ok(plain(picks.iter().map(|i| candidates[i]).collect()))
        }
        SamplerKind::MinUncertainty | SamplerKind::MaxUncertainty | SamplerKind::MedianUncertainty => {
            let asc = ascending(rank_pool_by_uncertainty(model, pool, ucfg, seed)?);
            let picked = match kind {
                SamplerKind::MinUncertainty => select_min(&asc, k),
                SamplerKind::MaxUncertainty => select_max(&asc, k),
                _ => sample_median_uncertainty(&asc, k),
            };
            Ok(plain(picked))
        }
        SamplerKind::Badge => {
            let emb = candidates
                .par_iter()
                .map(|&i| gradient_embedding(model, pool, i))
                .collect::<Result<Vec<_>, _>>()?;
            let (pos, warning) = kmeanspp_select(&emb, k, seed);
            Ok(Selection {
                indices: pos.into_iter().map(|p| candidates[p]).collect(),
                warning,
            })
        }
        SamplerKind::Clue => {
            let feats = candidates
                .par_iter()
                .map(|&i| Ok(model.embed(&pool.sample(i)?.image)?.values().to_vec()))
                .collect::<Result<Vec<_>, SamplingError>>()?;
            let scores = rank_pool_by_uncertainty(model, pool, ucfg, seed)?;
            let mut weights = vec![0.0; candidates.len()];
            for s in scores {
                let p = candidates.binary_search(&s.index).expect("scored candidate");
                weights[p] = s.u;
            }
            let pos = weighted_kmeans_select(&feats, &weights, k, KMEANS_MAX_ITERS, seed);
            Ok(plain(pos.into_iter().map(|p| candidates[p]).collect()))
        }
    }
}

/// Reorders scores ascending by uncertainty, ties by pool index.
pub fn ascending(mut scores: Vec<UncertaintyScore>) -> Vec<UncertaintyScore> {
    scores.sort_by(|a, b| a.u.total_cmp(&b.u).then(a.index.cmp(&b.index)));
    scores
}

/// The `k` least uncertain.
pub fn select_min(asc: &[UncertaintyScore], k: usize) -> Vec<usize> {
    asc[..k].iter().map(|s| s.index).collect()
}

/// The `k` most uncertain, most uncertain first.
pub fn select_max(asc: &[UncertaintyScore], k: usize) -> Vec<usize> {
    asc[asc.len() - k..].iter().rev().map(|s| s.index).collect()
}

/// Contiguous window of `k` ranks starting at `floor((n - k) / 2)` of the
/// ascending order.
pub fn sample_median_uncertainty(asc: &[UncertaintyScore], k: usize) -> Vec<usize> {
    let start = (asc.len() - k) / 2;
    asc[start..start + k].iter().map(|s| s.index).collect()
}

/// Spatial mean of `(P - onehot(argmax P)) x features`, flattened class-major.
pub fn gradient_embedding(model: &SegModel, pool: &DomainPool, index: usize) -> Result<Vec<f64>, SamplingError> {
    let (probs, feats) = model.predict_with_features(&pool.sample(index)?.image)?;
    let n = probs.pixel_count();
    let f = feats.len() / n;
    let arg = probs.argmax();
    let mut g = vec![0.0; probs.channels() * f];
    for c in 0..probs.channels() {
        let resid: Vec<f64> = (0..n)
            .map(|p| probs.get(c, p) - f64::from(u8::from(arg[p] == c)))
            .collect();
        for d in 0..f {
            let plane = &feats[d * n..(d + 1) * n];
            let s: f64 = resid.iter().zip(plane).map(|(r, x)| r * x).sum();
            g[c * f + d] = s / n as f64;
        }
    }
    Ok(g)
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Draws an index with probability proportional to `weights`; `None` when the
/// total is zero.
fn draw(weights: &[f64], rng: &mut SeededRng) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = Some(i);
            if target < w {
                return Some(i);
            }
            target -= w;
        }
    }
    last
}

/// k-means++ seeding with a deterministic first pick (largest norm, lowest
/// position on ties) and D^2 sampling afterwards. When every remaining point
/// coincides with a chosen one, the rest are taken in position order and a
/// `DegenerateEmbeddings` warning is returned.
pub fn kmeanspp_select(points: &[Vec<f64>], k: usize, seed: u64) -> (Vec<usize>, Option<String>) {
    let n = points.len();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut first = 0;
    for i in 1..n {
        if norm2(&points[i]) > norm2(&points[first]) {
            first = i;
        }
    }
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &points[first])).collect();
    let mut rng = SeededRng::new(seed);
    let mut warning = None;
    while chosen.len() < k {
        let weights: Vec<f64> = d2.iter().zip(&taken).map(|(&d, &t)| if t { 0.0 } else { d }).collect();
        let next = match draw(&weights, &mut rng) {
            Some(i) => i,
            None => {
                warning = Some("DegenerateEmbeddings: remaining embeddings coincide; filling in id order".to_string());
                (0..n).find(|&i| !taken[i]).expect("k <= n")
            }
        };
        chosen.push(next);
        taken[next] = true;
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[next]));
        }
    }
    (chosen, warning)
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(p, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Weighted k-means (weighted k-means++ initialisation, Lloyd updates capped at
/// `max_iters`), then the nearest not-yet-selected point to each centroid,
/// ties by position. All-zero weights are treated as uniform.
pub fn weighted_kmeans_select(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Vec<usize> {
    let n = points.len();
    let uniform = weights.iter().all(|&w| w <= 0.0);
    let w: Vec<f64> = if uniform {
        vec![1.0; n]
    } else {
        weights.iter().map(|&v| v.max(0.0)).collect()
    };
    let mut rng = SeededRng::new(seed);
    let mut taken = vec![false; n];
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut d2 = vec![f64::INFINITY; n];
    while centroids.len() < k {
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                if taken[i] {
                    0.0
                } else if centroids.is_empty() {
                    w[i]
                } else {
                    w[i] * d2[i]
                }
            })
            .collect();
        let pick = draw(&scores, &mut rng).unwrap_or_else(|| (0..n).find(|&i| !taken[i]).expect("k <= n"));
        taken[pick] = true;
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &points[pick]));
        }
    }
    let dim = points.first().map_or(0, Vec::len);
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iters {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            let mut mass = 0.0;
            for i in (0..n).filter(|&i| assign[i] == c) {
                mass += w[i];
                for (s, x) in sum.iter_mut().zip(&points[i]) {
                    *s += w[i] * x;
                }
            }
            if mass > 0.0 {
                *centroid = sum.into_iter().map(|s| s / mass).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let mut selected = vec![false; n];
    centroids
        .iter()
        .map(|c| {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for i in (0..n).filter(|&i| !selected[i]) {
                let d = squared_distance(&points[i], c);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            selected[best] = true;
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GrayImage, Sample};
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn scores(us: &[f64]) -> Vec<UncertaintyScore> {
        us.iter()
            .enumerate()
            .map(|(i, &u)| UncertaintyScore {
                index: i,
                image_id: format!("s{i}"),
                u,
            })
            .collect()
    }

    #[test]
    fn median_window_examples() {
        let s = ascending(scores(&[0.1, 0.2, 0.3, 0.4, 0.5]));
        assert_eq!(sample_median_uncertainty(&s, 1), vec![2]);
        assert_eq!(sample_median_uncertainty(&s, 2), vec![1, 2]);
        assert_eq!(sample_median_uncertainty(&s, 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn min_max_median_agree_on_ranks() {
        let s = ascending(scores(&[0.4, 0.1, 0.9, 0.3, 0.7, 0.2]));
        assert_eq!(select_min(&s, 1), vec![1]);
        assert_eq!(select_max(&s, 1), vec![2]);
        // rank floor((6 - 1) / 2) = 2 in ascending order: 0.1, 0.2, [0.3], ...
        assert_eq!(sample_median_uncertainty(&s, 1), vec![3]);
    }

    proptest! {
        #[test]
        fn rank_samplers_ignore_monotone_transforms(
            us in proptest::collection::btree_set(0u32..1000, 1..20),
            k in 1usize..5,
        ) {
            let us: Vec<f64> = us.into_iter().map(|v| v as f64 / 1000.0).rev().collect();
            let k = k.min(us.len());
            let a = ascending(scores(&us));
            let b = ascending(scores(&us.iter().map(|u| (3.0 * u).exp()).collect::<Vec<_>>()));
            prop_assert_eq!(select_min(&a, k), select_min(&b, k));
            prop_assert_eq!(select_max(&a, k), select_max(&b, k));
            prop_assert_eq!(sample_median_uncertainty(&a, k), sample_median_uncertainty(&b, k));
        }

        #[test]
        fn removing_candidates_keeps_relative_order(
            us in proptest::collection::vec(0.0f64..1.0, 2..15),
            drop in 0usize..15,
        ) {
            let full = ascending(scores(&us));
            let drop = drop % us.len();
            let reduced: Vec<UncertaintyScore> = scores(&us).into_iter().filter(|s| s.index != drop).collect();
            let reduced = ascending(reduced);
            let expect: Vec<usize> = full.iter().map(|s| s.index).filter(|&i| i != drop).collect();
            prop_assert_eq!(reduced.iter().map(|s| s.index).collect::<Vec<_>>(), expect);
        }
    }

    fn cluster_points(centres: &[(f64, f64)], per: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeededRng::new(seed);
        let mut out = Vec::new();
        for i in 0..per {
            for &(x, y) in centres {
                let _ = i;
                out.push(vec![x + rng.random::<f64>() * 0.1, y + rng.random::<f64>() * 0.1]);
            }
        }
        out
    }

    #[test]
    fn kmeanspp_first_pick_is_largest_norm() {
        let pts = vec![vec![1.0, 0.0], vec![3.0, 4.0], vec![0.0, 2.0]];
        assert_eq!(kmeanspp_select(&pts, 1, 0).0, vec![1]);
    }

    #[test]
    fn kmeanspp_covers_two_far_clusters() {
        let pts = cluster_points(&[(0.0, 0.0), (50.0, 50.0)], 6, 3);
        for seed in 0..20 {
            let (pick, warn) = kmeanspp_select(&pts, 2, seed);
            assert!(warn.is_none());
            let groups: BTreeSet<usize> = pick.iter().map(|&i| i % 2).collect();
            assert_eq!(groups.len(), 2, "seed {seed}");
        }
    }

    #[test]
    fn kmeanspp_degenerate_falls_back_to_order() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let (pick, warn) = kmeanspp_select(&pts, 3, 9);
        assert_eq!(pick, vec![0, 1, 2]);
        assert!(warn.unwrap().starts_with("DegenerateEmbeddings"));
    }

    #[test]
    fn weighted_kmeans_single_heavy_point() {
        let pts = cluster_points(&[(0.0, 0.0), (5.0, 5.0)], 4, 1);
        let mut w = vec![0.0; pts.len()];
        w[5] = 1.0;
        assert_eq!(weighted_kmeans_select(&pts, &w, 1, 50, 4), vec![5]);
    }

    #[test]
    fn weighted_kmeans_uniform_weights_are_plain_kmeans() {
        let pts = cluster_points(&[(0.0, 0.0), (5.0, 5.0), (9.0, 0.0)], 5, 2);
        let ones = weighted_kmeans_select(&pts, &vec![1.0; pts.len()], 3, 50, 6);
        let halves = weighted_kmeans_select(&pts, &vec![0.5; pts.len()], 3, 50, 6);
        let zeros = weighted_kmeans_select(&pts, &vec![0.0; pts.len()], 3, 50, 6);
        assert_eq!(ones, halves);
        assert_eq!(ones, zeros);
    }

    #[test]
    fn weighted_kmeans_one_pick_per_planted_cluster() {
        let pts = cluster_points(&[(0.0, 0.0), (20.0, 0.0), (0.0, 20.0)], 6, 8);
        let w: Vec<f64> = (0..pts.len()).map(|i| 0.2 + (i % 5) as f64 * 0.1).collect();
        for seed in 0..10 {
            let pick = weighted_kmeans_select(&pts, &w, 3, 50, seed);
            let groups: BTreeSet<usize> = pick.iter().map(|&i| i % 3).collect();
            assert_eq!(groups.len(), 3, "seed {seed}");
        }
    }

    fn model() -> SegModel {
        SegModel::init(
            &ModelConfig {
                depth: 1,
                base_channels: 2,
                input_size: 8,
                dropout_rate: 0.3,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    fn pool(n: usize) -> DomainPool {
        DomainPool::unlabeled(
            "p",
            (0..n)
                .map(|i| {
                    let px = (0..64).map(|p| ((p * (i + 3) * 29) % 251) as u8).collect();
                    Sample::new(format!("s{i}"), GrayImage::new(8, 8, px).unwrap(), None).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn every_sampler_returns_distinct_unlabeled_indices() {
        let m = model();
        let p = pool(7);
        let cfg = UncertaintyConfig {
            k_passes: 3,
            ..Default::default()
        };
        for kind in SamplerKind::ALL {
            for k in [1, 3, 7] {
                let sel = sample(kind, &m, &p, k, &cfg, 11).unwrap();
                let set: BTreeSet<usize> = sel.indices.iter().copied().collect();
                assert_eq!(set.len(), k, "{kind}");
                assert!(set.iter().all(|i| p.unlabeled_ids().contains(i)));
                assert_eq!(sel, sample(kind, &m, &p, k, &cfg, 11).unwrap(), "{kind} repeatable");
            }
            assert_eq!(sample(kind, &m, &p, 0, &cfg, 1).unwrap_err().kind(), "InvalidBatch");
            assert_eq!(sample(kind, &m, &p, 8, &cfg, 1).unwrap_err().kind(), "PoolExhausted");
        }
    }

    #[test]
    fn labeled_samples_are_never_picked() {
        let m = model();
        let mut p = pool(6);
        let labels = crate::data::LabelMap::new(8, 8, vec![1; 64]).unwrap();
        let mut samples = p.samples().to_vec();
        for s in &mut samples {
            s.labels = Some(labels.clone());
        }
        p = DomainPool::unlabeled("p", samples);
        p.annotate(&[0, 2, 4]).unwrap();
        for kind in SamplerKind::ALL {
            let sel = sample(kind, &m, &p, 3, &UncertaintyConfig::default(), 2).unwrap();
            let set: BTreeSet<usize> = sel.indices.into_iter().collect();
            assert_eq!(set, BTreeSet::from([1, 3, 5]), "{kind}");
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in SamplerKind::ALL {
            assert_eq!(kind.as_str().parse::<SamplerKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.as_str()));
        }
        assert_eq!("foo".parse::<SamplerKind>().unwrap_err().kind(), "UnknownSampler");
    }

    #[test]
    fn gradient_embedding_has_class_times_feature_length() {
        let m = model();
        let p = pool(1);
        let g = gradient_embedding(&m, &p, 0).unwrap();
        assert_eq!(g.len(), 2 * 2);
        assert!(g.iter().all(|v| v.is_finite()));
    }
}
