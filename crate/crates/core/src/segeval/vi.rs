//! Variation of information between two instance labelings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::LabelMap;
use crate::numeric::tree_sum;

/// Conditional entropies in nats. `vi_split = H(gt | pred)` and
/// `vi_merge = H(pred | gt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VIResult {
    pub vi_split: f64,
    pub vi_merge: f64,
    pub vi_total: f64,
    pub pixels: usize,
}

/// `-sum_ij p_ij ln(p_ij / p_j)` where `j` indexes the conditioning labels.
fn conditional_entropy(
    joint: &BTreeMap<(u32, u32), u64>,
    given: &BTreeMap<u32, u64>,
    given_is_first: bool,
    total: f64,
) -> f64 {
    let terms: Vec<f64> = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let g = given[if given_is_first { &a } else { &b }];
            let pij = c as f64 / total;
            -pij * (c as f64 / g as f64).ln()
        })
        .collect();
    tree_sum(&terms)
}

/// VI from the contingency table of the two labelings. With
/// `ignore_gt_zero`, pixels whose ground-truth label is 0 are not counted.
pub fn variation_of_information(pred: &LabelMap, gt: &LabelMap, ignore_gt_zero: bool) -> Result<VIResult, EvalError> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(EvalError::ShapeMismatch(
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let mut joint: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut pred_counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut gt_counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut pixels = 0usize;
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if ignore_gt_zero && g == 0 {
            continue;
        }
        *joint.entry((p, g)).or_default() += 1;
        *pred_counts.entry(p).or_default() += 1;
        *gt_counts.entry(g).or_default() += 1;
        pixels += 1;
    }
    if pixels == 0 {
        return Err(EvalError::NoPixels);
    }
    let total = pixels as f64;
    let vi_split = conditional_entropy(&joint, &pred_counts, true, total);
    let vi_merge = conditional_entropy(&joint, &gt_counts, false, total);
    Ok(VIResult {
        vi_split,
        vi_merge,
        vi_total: vi_split + vi_merge,
        pixels,
    })
}
