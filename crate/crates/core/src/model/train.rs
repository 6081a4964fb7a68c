use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{ModelError, SegModel};
use crate::data::{GrayImage, LabelMap, Sample, SeededRng, MEMBRANE_CHANNEL};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optional early stop: halt once the mean loss of the latest `window` steps
/// improves on the previous window by less than `min_improvement`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStop {
    pub window: usize,
    pub min_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Step budget used when the caller does not pass one explicitly.
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Random horizontal/vertical flips.
    pub augment: bool,
    pub seed: u64,
    pub convergence: Option<ConvergenceStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 1,
            learning_rate: 1e-3,
            augment: true,
            seed: 0,
            convergence: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Class index per pixel: the membrane class where the label is 0, class 1 elsewhere.
pub fn membrane_targets(labels: &LabelMap) -> Vec<usize> {
    labels
        .labels()
        .iter()
        .map(|&l| if l == 0 { MEMBRANE_CHANNEL } else { 1 - MEMBRANE_CHANNEL })
        .collect()
}

fn flip(pixels: &mut [u8], targets: &mut [usize], w: usize, h: usize, horizontal: bool) {
    if horizontal {
        for y in 0..h {
            pixels[y * w..(y + 1) * w].reverse();
            targets[y * w..(y + 1) * w].reverse();
        }
    } else {
        for y in 0..h / 2 {
            for x in 0..w {
                pixels.swap(y * w + x, (h - 1 - y) * w + x);
                targets.swap(y * w + x, (h - 1 - y) * w + x);
            }
        }
    }
}

fn draw_example(
    sample: &Sample,
    size: usize,
    augment: bool,
    rng: &mut SeededRng,
) -> Result<(GrayImage, Vec<usize>), ModelError> {
    let labels = sample.labels.as_ref().ok_or(ModelError::NoLabels)?;
    let (w, h) = (sample.image.width(), sample.image.height());
    let (image, labels) = if w > size || h > size {
        let cw = size.min(w);
        let ch = size.min(h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        (sample.image.crop(x0, y0, cw, ch)?, labels.crop(x0, y0, cw, ch)?)
    } else {
        (sample.image.clone(), labels.clone())
    };
    let mut targets = membrane_targets(&labels);
    if !augment {
        return Ok((image, targets));
    }
    let (w, h) = (image.width(), image.height());
    let mut pixels = image.pixels().to_vec();
    if rng.random::<bool>() {
        flip(&mut pixels, &mut targets, w, h, true);
    }
    if rng.random::<bool>() {
        flip(&mut pixels, &mut targets, w, h, false);
    }
    Ok((GrayImage::new(w, h, pixels)?, targets))
}

/// Apply exactly `steps` Adam updates (unless a convergence stop is
/// configured and fires) with pixel-wise cross-entropy against the membrane
/// targets. Each update averages `batch_size` examples drawn uniformly from
/// `samples`, randomly cropped to the model input size when larger.
pub fn train_steps(
    model: &mut SegModel,
    samples: &[&Sample],
    cfg: &TrainConfig,
    steps: usize,
) -> Result<TrainReport, ModelError> {
    if steps == 0 {
        return Err(ModelError::InvalidSteps(0));
    }
    if samples.is_empty() {
        return Err(ModelError::NoLabels);
    }
    if samples.iter().any(|s| s.labels.is_none()) {
        return Err(ModelError::NoLabels);
    }
    let size = model.config.input_size;
    let batch = cfg.batch_size.max(1);
    let mut rng = SeededRng::new(cfg.seed);
    let mut losses = Vec::with_capacity(steps);
    let mut stopped_early = false;
    let mut grad_sum = vec![0.0; model.params.len()];
    for step in 0..steps {
        grad_sum.fill(0.0);
        let mut loss_sum = 0.0;
        for _ in 0..batch {
            let idx = rng.random_range(0..samples.len());
            let (image, targets) = draw_example(samples[idx], size, cfg.augment, &mut rng)?;
            let dropout_seed = rng.next_u64();
            let (loss, grad) = model.loss_and_gradient(&image, &targets, Some(dropout_seed))?;
            loss_sum += loss;
            for (s, g) in grad_sum.iter_mut().zip(&grad) {
                *s += g;
            }
        }
        let scale = 1.0 / batch as f64;
        for g in &mut grad_sum {
            *g *= scale;
        }
        adam_update(model, &grad_sum, cfg.learning_rate);
        losses.push(loss_sum * scale);

        if let Some(stop) = &cfg.convergence {
            let w = stop.window.max(1);
            if (step + 1) % w == 0 && losses.len() >= 2 * w {
                let recent: f64 = losses[losses.len() - w..].iter().sum::<f64>() / w as f64;
                let before: f64 = losses[losses.len() - 2 * w..losses.len() - w].iter().sum::<f64>() / w as f64;
                if before - recent < stop.min_improvement {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(TrainReport {
        steps: losses.len(),
        losses,
        stopped_early,
    })
}

fn adam_update(model: &mut SegModel, grad: &[f64], lr: f64) {
    let st = &mut model.adam;
    st.t += 1;
    let t = st.t as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in model.params.iter_mut().zip(grad).zip(&mut st.m).zip(&mut st.v) {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}
