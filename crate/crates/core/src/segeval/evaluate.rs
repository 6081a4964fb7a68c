//! Model evaluation on a labeled pool: watershed each prediction and score it
//! against the ground-truth instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{seeded_watershed, variation_of_information, EvalError, VIResult, WatershedConfig};
use crate::data::{DataError, DomainPool, LabelMap, ProbMap};
use crate::model::SegModel;
use crate::numeric::tree_sum;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub watershed: WatershedConfig,
    /// Skip ground-truth membrane pixels (label 0) when scoring.
    pub ignore_gt_zero: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            watershed: WatershedConfig::default(),
            ignore_gt_zero: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageVi {
    pub image_id: String,
    pub vi: VIResult,
    /// The prediction had no seed region; the image was scored as a single instance.
    pub no_seeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageVi>,
    /// Unweighted mean over images; `pixels` is the total.
    pub mean: VIResult,
}

fn score(id: &str, probs: &ProbMap, gt: &LabelMap, cfg: &EvalConfig) -> Result<ImageVi, EvalError> {
    let (pred, no_seeds) = match seeded_watershed(probs, &cfg.watershed) {
        Ok(l) => (l, false),
        Err(EvalError::NoSeeds) => (
            LabelMap::new(probs.width(), probs.height(), vec![1; probs.pixel_count()])?,
            true,
        ),
        Err(e) => return Err(e),
    };
    Ok(ImageVi {
        image_id: id.to_string(),
        vi: variation_of_information(&pred, gt, cfg.ignore_gt_zero)?,
        no_seeds,
    })
}

fn summarize(per_image: Vec<ImageVi>) -> Result<EvalReport, EvalError> {
    if per_image.is_empty() {
        return Err(EvalError::EmptyPool);
    }
    let n = per_image.len() as f64;
    let field = |f: fn(&VIResult) -> f64| tree_sum(&per_image.iter().map(|r| f(&r.vi)).collect::<Vec<_>>()) / n;
    let mean = VIResult {
        vi_split: field(|v| v.vi_split),
        vi_merge: field(|v| v.vi_merge),
        vi_total: field(|v| v.vi_total),
        pixels: per_image.iter().map(|r| r.vi.pixels).sum(),
    };
    Ok(EvalReport { per_image, mean })
}

/// Scores precomputed probability maps against ground truth.
pub fn evaluate_predictions(items: &[(String, ProbMap, LabelMap)], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.watershed.validate()?;
    let per_image = items
        .par_iter()
        .map(|(id, p, gt)| score(id, p, gt, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    summarize(per_image)
}

/// Predicts, watersheds and scores every sample of `pool`, which must carry
/// labels throughout.
pub fn evaluate_model(model: &SegModel, pool: &DomainPool, cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    cfg.watershed.validate()?;
    let per_image = pool
        .samples()
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let gt = s.labels.as_ref().ok_or(DataError::MissingLabels(i))?;
            score(&s.id, &model.predict(&s.image)?, gt, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    summarize(per_image)
}
