//! Crate-wide error wrapping each module's error type.

use thiserror::Error;

use crate::adapt::AdaptError;
use crate::data::DataError;
use crate::mmd::MmdError;
use crate::model::ModelError;
use crate::pretrain::PretrainError;
use crate::sampling::SamplingError;
use crate::segeval::EvalError;
use crate::stats::StatsError;
use crate::synth::SynthError;
use crate::uncertainty::UncertaintyError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mmd(#[from] MmdError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
}

impl Error {
    /// Stable machine-readable error name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(e) => e.kind(),
            Error::Model(e) => e.kind(),
            Error::Mmd(e) => e.kind(),
            Error::Uncertainty(e) => e.kind(),
            Error::Sampling(e) => e.kind(),
            Error::Adapt(e) => e.kind(),
            Error::Eval(e) => e.kind(),
            Error::Stats(e) => e.kind(),
            Error::Synth(e) => e.kind(),
            Error::Pretrain(e) => e.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
