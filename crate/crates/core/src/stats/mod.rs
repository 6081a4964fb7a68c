//! Hypothesis tests and clustering over domain distance matrices.

mod agreement;
mod cluster;
mod mannwhitney;

pub use agreement::{fowlkes_mallows, permutation_test_fm, PermutationMode, PermutationResult, EXACT_LIMIT};
pub use cluster::{agglomerative_cluster, cut_at_k, symmetrize, Clustering, Dendrogram, Merge};
pub use mannwhitney::{mann_whitney_u, Alternative, MannWhitney, EXACT_MAX_TOTAL};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("matrix is not square")]
    NotSquare,
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("need at least {0} items")]
    TooFewItems(usize),
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("clusterings cover different items")]
    ItemMismatch,
    #[error("group is empty")]
    EmptyGroup,
    #[error("exact enumeration of {0} assignments exceeds the limit")]
    ExactTooLarge(u128),
    #[error("permutation count must be at least 1")]
    InvalidPermutations,
    #[error("non-finite value in input")]
    NonFinite,
}

impl StatsError {
    pub fn kind(&self) -> &'static str {
        match self {
            StatsError::NotSquare => "NotSquare",
            StatsError::NotSymmetric(..) => "NotSymmetric",
            StatsError::TooFewItems(_) => "TooFewItems",
            StatsError::KOutOfRange { .. } => "KOutOfRange",
            StatsError::ItemMismatch => "ItemMismatch",
            StatsError::EmptyGroup => "EmptyGroup",
            StatsError::ExactTooLarge(_) => "ExactTooLarge",
            StatsError::InvalidPermutations => "InvalidPermutations",
            StatsError::NonFinite => "NonFinite",
        }
    }
}
