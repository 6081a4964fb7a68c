//! MC-dropout uncertainty: mean predictive distribution over K stochastic
//! passes, pixel entropy in nats, and per-image mean entropy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{derive_seed, DataError, DomainPool, GrayImage, ProbMap};
use crate::model::{ModelError, SegModel};
use crate::numeric::tree_sum;

#[derive(Debug, Error)]
pub enum UncertaintyError {
    #[error("invalid uncertainty config: {0}")]
    InvalidConfig(String),
    #[error("unlabeled pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl UncertaintyError {
    pub fn kind(&self) -> &'static str {
        match self {
            UncertaintyError::InvalidConfig(_) => "InvalidConfig",
            UncertaintyError::EmptyPool => "EmptyPool",
            UncertaintyError::Model(e) => e.kind(),
            UncertaintyError::Data(e) => e.kind(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyConfig {
    /// Stochastic forward passes per image.
    pub k_passes: usize,
    /// Added inside the logarithm.
    pub epsilon: f64,
    /// Clamp the small negative entropies that `epsilon` produces at one-hot pixels.
    pub clamp_negative: bool,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            k_passes: 10,
            epsilon: 1e-12,
            clamp_negative: true,
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<(), UncertaintyError> {
        if self.k_passes == 0 {
            return Err(UncertaintyError::InvalidConfig("k_passes must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(UncertaintyError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of stochastic pass `k`. Depends only on `(seed, k)`, so the same image
/// scores identically wherever it appears in a pool.
pub fn pass_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

/// Mean of K stochastic predictions. Accumulated as a running mean so that K
/// identical passes reproduce the single pass bit for bit.
pub fn mc_mean_prediction(
    model: &SegModel,
    image: &GrayImage,
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<ProbMap, UncertaintyError> {
    cfg.validate()?;
    let first = model.predict_stochastic(image, pass_seed(seed, 0))?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let mut mean = first.data().to_vec();
    for k in 1..cfg.k_passes {
        let pass = model.predict_stochastic(image, pass_seed(seed, k))?;
        let weight = 1.0 / (k + 1) as f64;
        for (m, p) in mean.iter_mut().zip(pass.data()) {
            *m += (p - *m) * weight;
        }
    }
    Ok(ProbMap::from_raw(w, h, c, mean)?)
}

/// Per-pixel `-sum_c p_c ln(p_c + epsilon)`.
pub fn pixel_entropy(mean: &ProbMap, epsilon: f64, clamp_negative: bool) -> Vec<f64> {
    (0..mean.pixel_count())
        .map(|px| {
            let mut h = 0.0;
            for c in 0..mean.channels() {
                let p = mean.get(c, px);
                h -= p * (p + epsilon).ln();
            }
            if clamp_negative {
                h.max(0.0)
            } else {
                h
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageUncertainty {
    /// Mean pixel entropy, nats.
    pub u: f64,
    pub entropy: Vec<f64>,
}

pub fn mean_entropy(entropy: &[f64]) -> f64 {
    tree_sum(entropy) / entropy.len() as f64
}

pub fn image_uncertainty(
    model: &SegModel,
    image: &GrayImage,
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<ImageUncertainty, UncertaintyError> {
    let mean = mc_mean_prediction(model, image, cfg, seed)?;
    let entropy = pixel_entropy(&mean, cfg.epsilon, cfg.clamp_negative);
    Ok(ImageUncertainty {
        u: mean_entropy(&entropy),
        entropy,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    /// Position in the pool.
    pub index: usize,
    pub image_id: String,
    pub u: f64,
}

/// Scores every unlabeled sample, most uncertain first; ties by pool index.
pub fn rank_pool_by_uncertainty(
    model: &SegModel,
    pool: &DomainPool,
    cfg: &UncertaintyConfig,
    seed: u64,
) -> Result<Vec<UncertaintyScore>, UncertaintyError> {
    cfg.validate()?;
    if pool.unlabeled_ids().is_empty() {
        return Err(UncertaintyError::EmptyPool);
    }
    let ids: Vec<usize> = pool.unlabeled_ids().iter().copied().collect();
    let mut scores: Vec<UncertaintyScore> = ids
        .par_iter()
        .map(|&i| {
            let s = pool.sample(i)?;
            Ok(UncertaintyScore {
                index: i,
                image_id: s.id.clone(),
                u: image_uncertainty(model, &s.image, cfg, seed)?.u,
            })
        })
        .collect::<Result<_, UncertaintyError>>()?;
    scores.sort_by(|a, b| b.u.total_cmp(&a.u).then(a.index.cmp(&b.index)));
    Ok(scores)
}

/// Entropy map as an 8-bit image scaled by `255 / ln(channels)`. Returns the
/// image and the scale factor applied.
pub fn entropy_heatmap(
    entropy: &[f64],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<(GrayImage, f64), UncertaintyError> {
    let scale = 255.0 / (channels.max(2) as f64).ln();
    let pixels = entropy
        .iter()
        .map(|h| (h * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((GrayImage::new(width, height, pixels)?, scale))
}
