//! Seeded watershed by priority flooding on the membrane probability map.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::{LabelMap, ProbMap, MEMBRANE_CHANNEL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatershedConfig {
    /// Pixels with membrane probability below this can seed a region.
    pub threshold: f64,
    /// Smallest 4-connected component accepted as a seed.
    pub min_seed_area: usize,
}

impl Default for WatershedConfig {
    fn default() -> Self {
        WatershedConfig {
            threshold: 0.5,
            min_seed_area: 8,
        }
    }
}

impl WatershedConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(EvalError::InvalidConfig(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        if self.min_seed_area == 0 {
            return Err(EvalError::InvalidConfig("min_seed_area must be at least 1".into()));
        }
        Ok(())
    }
}

fn neighbors(p: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (p % w, p / w);
    [
        (y > 0).then(|| p - w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

#[derive(PartialEq)]
struct Entry {
    level: f64,
    pixel: usize,
    label: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.level
            .total_cmp(&other.level)
            .then(self.pixel.cmp(&other.pixel))
            .then(self.label.cmp(&other.label))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Watershed over a raw membrane map (one value per pixel, row-major).
/// Seeds are labelled `1..=n` in raster order of their first pixel.
pub fn watershed_from_membrane(
    width: usize,
    height: usize,
    membrane: &[f64],
    cfg: &WatershedConfig,
) -> Result<LabelMap, EvalError> {
    if membrane.len() != width * height {
        return Err(EvalError::ShapeMismatch(width, height, membrane.len(), 1));
    }
    let n = membrane.len();
    let mut labels = vec![0u32; n];
    let mut visited = vec![false; n];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if visited[start] || !(membrane[start] < cfg.threshold) {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut component = Vec::new();
        while let Some(p) = queue.pop_front() {
            component.push(p);
            for q in neighbors(p, width, height) {
                if !visited[q] && membrane[q] < cfg.threshold {
                    visited[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if component.len() >= cfg.min_seed_area {
            next += 1;
            for p in component {
                labels[p] = next;
            }
        }
    }
    if next == 0 {
        return Err(EvalError::NoSeeds);
    }
    let mut heap = BinaryHeap::new();
    for p in 0..n {
        if labels[p] != 0 {
            for q in neighbors(p, width, height) {
                if labels[q] == 0 {
                    heap.push(Reverse(Entry {
                        level: membrane[q],
                        pixel: q,
                        label: labels[p],
                    }));
                }
            }
        }
    }
    while let Some(Reverse(e)) = heap.pop() {
        if labels[e.pixel] != 0 {
            continue;
        }
        labels[e.pixel] = e.label;
        for q in neighbors(e.pixel, width, height) {
            if labels[q] == 0 {
                heap.push(Reverse(Entry {
                    level: membrane[q],
                    pixel: q,
                    label: e.label,
                }));
            }
        }
    }
    Ok(LabelMap::new(width, height, labels)?)
}

/// Watershed over the membrane channel of a probability map.
pub fn seeded_watershed(probs: &ProbMap, cfg: &WatershedConfig) -> Result<LabelMap, EvalError> {
    cfg.validate()?;
    watershed_from_membrane(probs.width(), probs.height(), probs.channel(MEMBRANE_CHANNEL), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn map(w: usize, h: usize, m: Vec<f64>) -> ProbMap {
        ProbMap::from_membrane(w, h, &m).unwrap()
    }

    #[test]
    fn empty_map_is_one_instance() {
        let l = seeded_watershed(&map(6, 5, vec![0.0; 30]), &WatershedConfig::default()).unwrap();
        assert!(l.labels().iter().all(|&v| v == 1));
    }

    #[test]
    fn vertical_ridge_splits_in_two() {
        let (w, h) = (9, 6);
        let m: Vec<f64> = (0..w * h).map(|p| if p % w == 4 { 1.0 } else { 0.0 }).collect();
        let l = seeded_watershed(&map(w, h, m), &WatershedConfig::default()).unwrap();
        let distinct: BTreeSet<u32> = l.labels().iter().copied().collect();
        assert_eq!(distinct, BTreeSet::from([1, 2]));
        assert_eq!(l.get(0, 0), 1);
        assert_eq!(l.get(8, 5), 2);
        // ridge pixel ties resolve to the lower label
        assert_eq!(l.get(4, 0), 1);
    }

    #[test]
    fn saturated_map_has_no_seeds() {
        let err = seeded_watershed(&map(4, 4, vec![1.0; 16]), &WatershedConfig::default()).unwrap_err();
        assert_eq!(err.kind(), "NoSeeds");
    }

    #[test]
    fn small_basins_are_flooded_by_neighbours() {
        // 3-pixel basin on the left is below min area and gets absorbed
        let (w, h) = (10, 4);
        let m: Vec<f64> = (0..w * h)
            .map(|p| match p % w {
                0 if p / w < 3 => 0.0,
                0 | 1 => 0.9,
                _ => 0.1,
            })
            .collect();
        let l = seeded_watershed(&map(w, h, m), &WatershedConfig::default()).unwrap();
        assert!(l.labels().iter().all(|&v| v == 1));
    }

    #[test]
    fn config_validation() {
        let bad = WatershedConfig {
            threshold: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = WatershedConfig {
            min_seed_area: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err().kind(), "InvalidConfig");
    }

    proptest! {
        #[test]
        fn total_labeling_with_one_label_per_seed(raw in proptest::collection::vec(0u8..8, 64)) {
            let m: Vec<f64> = raw.iter().map(|&v| v as f64 / 8.0).collect();
            let cfg = WatershedConfig { threshold: 0.5, min_seed_area: 2 };
            if let Ok(l) = watershed_from_membrane(8, 8, &m, &cfg) {
                prop_assert!(l.labels().iter().all(|&v| v >= 1));
                let distinct: BTreeSet<u32> = l.labels().iter().copied().collect();
                let max = *distinct.iter().max().unwrap();
                prop_assert_eq!(distinct.len() as u32, max);
            }
        }

        #[test]
        fn shifting_map_and_threshold_together_changes_nothing(raw in proptest::collection::vec(0u8..8, 64)) {
            let m: Vec<f64> = raw.iter().map(|&v| v as f64 / 8.0).collect();
            let shifted: Vec<f64> = m.iter().map(|v| v + 0.25).collect();
            let a = watershed_from_membrane(8, 8, &m, &WatershedConfig { threshold: 0.5, min_seed_area: 2 });
            let b = watershed_from_membrane(8, 8, &shifted, &WatershedConfig { threshold: 0.75, min_seed_area: 2 });
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "one side failed"),
            }
        }
    }
}
