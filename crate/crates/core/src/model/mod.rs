//! Small U-Net with dropout: deterministic and MC-dropout inference, bottleneck
//! embeddings, and Adam training from scratch.

mod checkpoint;
mod layers;
mod train;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointDescriptor};
pub use train::{membrane_targets, train_steps, ConvergenceStop, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{DataError, EmbeddingVec, GrayImage, ProbMap, SeededRng};
use layers::Tensor;
use unet::Architecture;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no labeled samples to train on")]
    NoLabels,
    #[error("step count must be at least 1, got {0}")]
    InvalidSteps(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ModelError {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelError::InvalidConfig(_) => "InvalidConfig",
            ModelError::Shape(_) => "ShapeError",
            ModelError::NoLabels => "NoLabels",
            ModelError::InvalidSteps(_) => "InvalidSteps",
            ModelError::Checkpoint(_) => "CheckpointError",
            ModelError::Data(e) => e.kind(),
        }
    }
}

/// Per-image zero mean and unit variance; flat images are only centered.
fn standardize(mut x: Vec<f64>) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = crate::numeric::tree_sum(&x) / n;
    let sq: Vec<f64> = x.iter().map(|v| (v - mean) * (v - mean)).collect();
    let std = (crate::numeric::tree_sum(&sq) / n).sqrt();
    let scale = if std > 1e-6 { 1.0 / std } else { 1.0 };
    for v in x.iter_mut() {
        *v = (*v - mean) * scale;
    }
    x
}

/// U-Net architecture. Channels double per down-sampling stage starting at
/// `base_channels`; the bottleneck has `base_channels << depth` channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            num_classes: 2,
            dropout_rate: 0.1,
            input_size: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.depth == 0 {
            return Err(ModelError::InvalidConfig("depth must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(ModelError::InvalidConfig("base_channels must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::InvalidConfig("num_classes must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::InvalidConfig(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        let stride = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(stride) {
            return Err(ModelError::Shape(format!(
                "input size {} not divisible by 2^{} = {}",
                self.input_size, self.depth, stride
            )));
        }
        Ok(())
    }

    /// Length of [`SegModel::embed`] output.
    pub fn embedding_dim(&self) -> usize {
        self.base_channels << self.depth
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Model parameters (flat, keyed by [`ParamSpec`]) plus optimizer state.
#[derive(Clone, Debug)]
pub struct SegModel {
    config: ModelConfig,
    arch: Architecture,
    params: Vec<f64>,
    adam: AdamState,
}

impl SegModel {
    /// He-normal weights and zero biases drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let arch = Architecture::new(config);
        let mut params = vec![0.0; arch.param_count()];
        let mut rng = SeededRng::new(seed);
        for spec in arch.specs() {
            if spec.name.ends_with(".bias") {
                continue;
            }
            let fan_in = arch.fan_in(spec);
            let normal = rand_distr::Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for v in &mut params[spec.offset..spec.offset + spec.len] {
                *v = rand_distr::Distribution::sample(&normal, &mut rng);
            }
        }
        let adam = AdamState::new(params.len());
        Ok(Self {
            config: config.clone(),
            arch,
            params,
            adam,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        config.validate()?;
        let arch = Architecture::new(&config);
        if params.len() != arch.param_count() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        let adam = AdamState::new(params.len());
        Ok(Self {
            config,
            arch,
            params,
            adam,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        self.arch.specs()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access (finite-difference checks, surgery).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// SHA-256 over the little-endian parameter bytes; optimizer state excluded.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Fresh Adam moments, as at the start of a fine-tuning run.
    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::new(self.params.len());
    }

    pub fn check_image(&self, width: usize, height: usize) -> Result<(), ModelError> {
        let stride = 1usize << self.config.depth;
        if !width.is_multiple_of(stride) || !height.is_multiple_of(stride) || width == 0 || height == 0 {
            return Err(ModelError::Shape(format!(
                "image {width}x{height} not divisible by 2^{} = {stride}",
                self.config.depth
            )));
        }
        Ok(())
    }

    fn input_tensor(&self, image: &GrayImage) -> Result<Tensor, ModelError> {
        self.check_image(image.width(), image.height())?;
        Ok(Tensor {
            c: 1,
            h: image.height(),
            w: image.width(),
            data: standardize(image.to_unit()),
        })
    }

    fn to_probmap(t: Tensor) -> Result<ProbMap, ModelError> {
        Ok(ProbMap::from_raw(t.w, t.h, t.c, t.data)?)
    }

    /// Dropout disabled.
    pub fn predict(&self, image: &GrayImage) -> Result<ProbMap, ModelError> {
        let x = self.input_tensor(image)?;
        let fwd = self.arch.forward(&self.params, x, None, false);
        Self::to_probmap(fwd.probs)
    }

    /// One MC-dropout pass; masks are drawn from `seed`. With a dropout
    /// rate of zero this is exactly [`SegModel::predict`].
    pub fn predict_stochastic(&self, image: &GrayImage, seed: u64) -> Result<ProbMap, ModelError> {
        let x = self.input_tensor(image)?;
        let mut rng = SeededRng::new(seed);
        let rng = (self.config.dropout_rate > 0.0).then_some(&mut rng);
        let fwd = self.arch.forward(&self.params, x, rng, false);
        Self::to_probmap(fwd.probs)
    }

    /// Global max-pool of the bottleneck activation (dropout disabled).
    pub fn embed(&self, image: &GrayImage) -> Result<EmbeddingVec, ModelError> {
        let x = self.input_tensor(image)?;
        let fwd = self.arch.forward(&self.params, x, None, false);
        let b = &fwd.bottleneck;
        let values = (0..b.c)
            .map(|c| b.channel(c).iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(EmbeddingVec::new(values)?)
    }

    /// Deterministic prediction plus the last decoder block's activation,
    /// `features[c * pixels + p]` with `base_channels` channels.
    pub fn predict_with_features(&self, image: &GrayImage) -> Result<(ProbMap, Vec<f64>), ModelError> {
        let x = self.input_tensor(image)?;
        let fwd = self.arch.forward(&self.params, x, None, false);
        Ok((Self::to_probmap(fwd.probs)?, fwd.penultimate.data))
    }

    /// Mean pixel cross-entropy against `targets` (class index per pixel) and
    /// its gradient with respect to every parameter. `dropout_seed` = None
    /// disables dropout.
    pub fn loss_and_gradient(
        &self,
        image: &GrayImage,
        targets: &[usize],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let x = self.input_tensor(image)?;
        if targets.len() != image.width() * image.height() {
            return Err(ModelError::Shape("target length does not match image".into()));
        }
        let mut rng = dropout_seed.map(SeededRng::new);
        let rng = rng.as_mut().filter(|_| self.config.dropout_rate > 0.0);
        let fwd = self.arch.forward(&self.params, x, rng, true);
        let (loss, dlogits) = unet::cross_entropy(&fwd.probs, targets);
        let mut grad = vec![0.0; self.params.len()];
        self.arch.backward(&self.params, &fwd, dlogits, &mut grad);
        Ok((loss, grad))
    }

    /// Loss only, dropout disabled.
    pub fn loss(&self, image: &GrayImage, targets: &[usize]) -> Result<f64, ModelError> {
        let x = self.input_tensor(image)?;
        if targets.len() != image.width() * image.height() {
            return Err(ModelError::Shape("target length does not match image".into()));
        }
        let fwd = self.arch.forward(&self.params, x, None, false);
        Ok(unet::cross_entropy(&fwd.probs, targets).0)
    }
}
