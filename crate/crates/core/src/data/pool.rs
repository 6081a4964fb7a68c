use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{DataError, GrayImage, LabelMap};

/// Acquisition artifacts present in an image. Ground truth for synthetic data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactFlags {
    pub stripe: bool,
    pub black_tile: bool,
    pub contrast: bool,
}

impl ArtifactFlags {
    pub fn any(&self) -> bool {
        self.stripe || self.black_tile || self.contrast
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub labels: Option<LabelMap>,
    pub artifacts: ArtifactFlags,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage, labels: Option<LabelMap>) -> Result<Self, DataError> {
        if let Some(l) = &labels {
            l.same_shape(image.width(), image.height())?;
        }
        Ok(Self {
            id: id.into(),
            image,
            labels,
            artifacts: ArtifactFlags::default(),
        })
    }
}

/// Named collection of samples split into labeled (L) and unlabeled (U) index sets.
///
/// L and U always partition `0..samples.len()`, and every labeled sample
/// carries a label map.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainPool {
    name: String,
    samples: Vec<Sample>,
    labeled: BTreeSet<usize>,
    unlabeled: BTreeSet<usize>,
}

impl DomainPool {
    /// All samples start unlabeled, whether or not they carry ground truth.
    pub fn unlabeled(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        let unlabeled = (0..samples.len()).collect();
        Self {
            name: name.into(),
            samples,
            labeled: BTreeSet::new(),
            unlabeled,
        }
    }

    /// Every sample is labeled; fails if any lacks a label map.
    pub fn fully_labeled(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self, DataError> {
        if let Some(i) = samples.iter().position(|s| s.labels.is_none()) {
            return Err(DataError::MissingLabels(i));
        }
        let labeled = (0..samples.len()).collect();
        Ok(Self {
            name: name.into(),
            samples,
            labeled,
            unlabeled: BTreeSet::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> Result<&Sample, DataError> {
        self.samples.get(index).ok_or(DataError::IndexOutOfRange(index))
    }

    pub fn labeled_ids(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn unlabeled_ids(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn labeled_samples(&self) -> Vec<&Sample> {
        self.labeled.iter().map(|&i| &self.samples[i]).collect()
    }

    /// Move `ids` from U to L. All-or-nothing: on error the pool is untouched.
    pub fn annotate(&mut self, ids: &[usize]) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for &i in ids {
            if !self.unlabeled.contains(&i) || !seen.insert(i) {
                return Err(DataError::NotUnlabeled(i));
            }
            if self.samples[i].labels.is_none() {
                return Err(DataError::MissingLabels(i));
            }
        }
        for &i in ids {
            self.unlabeled.remove(&i);
            self.labeled.insert(i);
        }
        Ok(())
    }

    /// Forget all annotations: L = ∅, U = everything.
    pub fn reset_unlabeled(&mut self) {
        self.labeled.clear();
        self.unlabeled = (0..self.samples.len()).collect();
    }

    /// Index split: the first `round(len * fraction)` samples and the rest.
    /// Membership in L/U carries over.
    pub fn split_at_fraction(&self, fraction: f64) -> (DomainPool, DomainPool) {
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(0..cut), self.subset(cut..self.len()))
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> DomainPool {
        let offset = range.start;
        let samples = self.samples[range.clone()].to_vec();
        let labeled = self
            .labeled
            .iter()
            .filter(|i| range.contains(i))
            .map(|i| i - offset)
            .collect();
        let unlabeled = self
            .unlabeled
            .iter()
            .filter(|i| range.contains(i))
            .map(|i| i - offset)
            .collect();
        DomainPool {
            name: self.name.clone(),
            samples,
            labeled,
            unlabeled,
        }
    }

    /// True when L and U partition the index range and all of L is labeled.
    pub fn is_consistent(&self) -> bool {
        self.labeled.is_disjoint(&self.unlabeled)
            && self.labeled.len() + self.unlabeled.len() == self.samples.len()
            && self
                .labeled
                .iter()
                .chain(&self.unlabeled)
                .all(|&i| i < self.samples.len())
            && self.labeled.iter().all(|&i| self.samples[i].labels.is_some())
    }
}
