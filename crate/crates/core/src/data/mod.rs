//! Raster containers, sample pools, seeded randomness and on-disk formats.

mod embcache;
mod layout;
mod manifest;
mod pgm;
mod pool;
mod raster;
mod rng;

pub use embcache::{read_embeddings, write_embeddings, EmbeddingCache};
pub use layout::{read_domain, read_domain_names, write_domain, TEST_SPLIT, TRAIN_SPLIT};
pub use manifest::{
    aggregate, read_run_manifest, write_run_manifest, AggregateRow, RunManifest, RunResult, STD_CONVENTION,
};
pub use pgm::{
    decode_image, decode_labels, encode_image, encode_labels, load_image, load_labels, save_image, save_labels,
};
pub use pool::{ArtifactFlags, DomainPool, Sample};
pub use raster::{EmbeddingVec, GrayImage, LabelMap, ProbMap, MEMBRANE_CHANNEL};
pub use rng::{derive_seed, SeededRng};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ShapeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("buffer length {got} does not match {width}x{height}x{channels}")]
    BufferLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("image dimensions must be at least 1x1")]
    EmptyDimension,
    #[error("pixel {pixel} is not a probability vector")]
    InvalidProbabilities { pixel: usize },
    #[error("non-finite embedding entry at {0}")]
    NonFiniteEmbedding(usize),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("unsupported PGM maxval {0}")]
    UnsupportedDepth(u32),
    #[error("label {0} exceeds the 16-bit label range")]
    LabelOverflow(u32),
    #[error("sample {0} is not in the unlabeled pool")]
    NotUnlabeled(usize),
    #[error("sample {0} has no ground-truth labels")]
    MissingLabels(usize),
    #[error("sample index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("run has no results")]
    EmptyRun,
    #[error("run results incomplete: {0}")]
    IncompleteRun(String),
    #[error("embedding cache inconsistent: {0}")]
    CacheMismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl DataError {
    pub fn kind(&self) -> &'static str {
        match self {
            DataError::ShapeMismatch { .. } | DataError::BufferLength { .. } => "ShapeError",
            DataError::EmptyDimension => "EmptyDimension",
            DataError::InvalidProbabilities { .. } => "InvalidProbabilities",
            DataError::NonFiniteEmbedding(_) => "NonFiniteEmbedding",
            DataError::MalformedHeader(_) => "MalformedHeader",
            DataError::TruncatedPayload { .. } => "TruncatedPayload",
            DataError::UnsupportedDepth(_) => "UnsupportedDepth",
            DataError::LabelOverflow(_) => "LabelOverflow",
            DataError::NotUnlabeled(_) => "NotUnlabeled",
            DataError::MissingLabels(_) => "MissingLabels",
            DataError::IndexOutOfRange(_) => "IndexOutOfRange",
            DataError::EmptyRun => "EmptyRun",
            DataError::IncompleteRun(_) => "IncompleteRun",
            DataError::CacheMismatch(_) => "CacheMismatch",
            DataError::Io(_) => "Io",
            DataError::Json(_) => "Json",
            DataError::Csv(_) => "Csv",
        }
    }
}
