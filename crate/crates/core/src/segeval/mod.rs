//! Instance segmentation from membrane maps, variation of information and
//! result aggregation.

mod efficacy;
mod evaluate;
mod vi;
mod watershed;

pub use efficacy::{efficacy_table_csv, sampler_efficacy, Efficacy, EfficacyReport, EfficacyRow};
pub use evaluate::{evaluate_model, evaluate_predictions, EvalConfig, EvalReport, ImageVi};
pub use vi::{variation_of_information, VIResult};
pub use watershed::{seeded_watershed, watershed_from_membrane, WatershedConfig};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid watershed config: {0}")]
    InvalidConfig(String),
    #[error("membrane map has no seed region below the threshold")]
    NoSeeds,
    #[error("label maps differ in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("no pixels left to score")]
    NoPixels,
    #[error("evaluation pool is empty")]
    EmptyPool,
    #[error("no complete setting to score")]
    NoCompleteSettings,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::InvalidConfig(_) => "InvalidConfig",
            EvalError::NoSeeds => "NoSeeds",
            EvalError::ShapeMismatch(..) => "ShapeError",
            EvalError::NoPixels => "NoPixels",
            EvalError::EmptyPool => "EmptyPool",
            EvalError::NoCompleteSettings => "NoCompleteSettings",
            EvalError::Model(e) => e.kind(),
            EvalError::Data(e) => e.kind(),
        }
    }
}
