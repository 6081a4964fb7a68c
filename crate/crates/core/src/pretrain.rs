//! Per-domain source models: fresh init, fixed-step training on the first 80%
//! of a labeled domain, held-out VI on the remaining 20%.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, DomainPool};
use crate::model::{
    save_checkpoint, train_steps, CheckpointDescriptor, ModelConfig, ModelError, SegModel, TrainConfig,
};
use crate::segeval::{evaluate_model, EvalConfig, EvalError};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("pretraining needs at least 1 step")]
    InvalidSteps,
    #[error("domain {0} is not fully labeled")]
    NotLabeled(String),
    #[error("domain {0} is too small to split into train and held-out parts")]
    TooFewSamples(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl PretrainError {
    pub fn kind(&self) -> &'static str {
        match self {
            PretrainError::InvalidSteps => "InvalidSteps",
            PretrainError::NotLabeled(_) => "MissingLabels",
            PretrainError::TooFewSamples(_) => "TooFewSamples",
            PretrainError::Model(e) => e.kind(),
            PretrainError::Eval(e) => e.kind(),
            PretrainError::Data(e) => e.kind(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainJob {
    pub domain: String,
    pub model: ModelConfig,
    /// `train.steps` is the step count; `train.seed` also seeds the init.
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Checkpoint prefix; nothing is written when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub domain: String,
    pub model: SegModel,
    pub final_loss: f64,
    pub heldout_vi: f64,
    pub train_size: usize,
    pub heldout_size: usize,
    pub checkpoint: Option<CheckpointDescriptor>,
}

impl PretrainOutcome {
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "domain": self.domain,
            "final_loss": self.final_loss,
            "heldout_vi": self.heldout_vi,
            "train_size": self.train_size,
            "heldout_size": self.heldout_size,
            "param_hash": self.model.param_hash(),
        })
    }
}

/// Train a source model for `pool`. Deterministic in `job`.
pub fn pretrain_domain(pool: &DomainPool, job: &PretrainJob) -> Result<PretrainOutcome, PretrainError> {
    if job.train.steps == 0 {
        return Err(PretrainError::InvalidSteps);
    }
    if pool.labeled_ids().len() != pool.len() {
        return Err(PretrainError::NotLabeled(pool.name().to_string()));
    }
    let (train, heldout) = pool.split_at_fraction(TRAIN_FRACTION);
    if train.is_empty() || heldout.is_empty() {
        return Err(PretrainError::TooFewSamples(pool.name().to_string()));
    }
    let mut model = SegModel::init(&job.model, job.train.seed)?;
    let samples: Vec<_> = train.samples().iter().collect();
    let report = train_steps(&mut model, &samples, &job.train, job.train.steps)?;
    let heldout_vi = evaluate_model(&model, &heldout, &job.eval)?.mean.vi_total;
    let mut outcome = PretrainOutcome {
        domain: pool.name().to_string(),
        model,
        final_loss: report.final_loss(),
        heldout_vi,
        train_size: train.len(),
        heldout_size: heldout.len(),
        checkpoint: None,
    };
    if let Some(prefix) = &job.output {
        outcome.checkpoint = Some(save_checkpoint(&outcome.model, prefix, outcome.summary())?);
    }
    Ok(outcome)
}

/// One job per pool, run in parallel; results keep the input order.
pub fn pretrain_all(pools: &[DomainPool], jobs: &[PretrainJob]) -> Result<Vec<PretrainOutcome>, PretrainError> {
    pools
        .par_iter()
        .zip(jobs.par_iter())
        .map(|(p, j)| pretrain_domain(p, j))
        .collect()
}
