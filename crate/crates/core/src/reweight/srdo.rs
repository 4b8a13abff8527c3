//! Density-ratio weighting toward the product of the training marginals.

use serde::{Deserialize, Serialize};

use super::weights::{normalize_clip, WeightSet};
use crate::error::{Error, Result};
use crate::nn::{mlp_train, Activation, LossKind, MlpModel, OutputHead, TrainConfig};
use crate::numeric::{permutation, Matrix, Rng};

/// Permutes every column independently, which keeps each marginal and
/// breaks the joint dependence.
pub fn srdo_resample(x: &Matrix, rng: &mut Rng) -> Matrix {
    let (n, p) = (x.rows(), x.cols());
    let mut out = Matrix::zeros(n, p);
    for j in 0..p {
        let perm = permutation(n, rng);
        for (i, &src) in perm.iter().enumerate() {
            out.set(i, j, x.get(src, j));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrdoClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Predicted probabilities are clipped to `[prob_clip, 1 − prob_clip]`.
    pub prob_clip: f64,
    pub clip_quantile: f64,
}

impl Default for SrdoClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            train: TrainConfig {
                learning_rate: 0.1,
                max_epochs: 30,
                batch_size: 64,
                weight_decay: 0.0,
                early_stop_patience: 5,
                validation_fraction: 0.2,
                optimizer: crate::nn::Optimizer::Sgd,
            },
            prob_clip: 1e-3,
            clip_quantile: 0.99,
        }
    }
}

pub const MIN_CLASSIFIER_SAMPLES: usize = 50;

/// Trains a classifier separating column-permuted rows (label 1) from the
/// original rows (label 0) and turns its odds into sample weights.
pub fn srdo_learn_classifier(
    x: &Matrix,
    cfg: &SrdoClassifierConfig,
    rng: &mut Rng,
) -> Result<WeightSet> {
    let n = x.rows();
    if n < MIN_CLASSIFIER_SAMPLES {
        return Err(Error::invalid(format!(
            "density-ratio classifier needs at least {MIN_CLASSIFIER_SAMPLES} samples, got {n}"
        )));
    }
    if !(cfg.prob_clip > 0.0 && cfg.prob_clip < 0.5) {
        return Err(Error::invalid("prob_clip must lie in (0, 0.5)"));
    }
    let resampled = srdo_resample(x, rng);
    let data = x.vstack(&resampled)?;
    let labels: Vec<f64> = (0..2 * n).map(|i| if i < n { 0.0 } else { 1.0 }).collect();

    let mut sizes = Vec::with_capacity(cfg.hidden.len() + 2);
    sizes.push(x.cols());
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let init = MlpModel::init(&sizes, cfg.activation, OutputHead::Sigmoid, rng)?;
    let model = mlp_train(
        &init,
        &data,
        &labels,
        None,
        LossKind::WeightedBce,
        &cfg.train,
        rng,
    )?;

    let probs = model.forward(x)?;
    let raw: Vec<f64> = probs
        .into_iter()
        .map(|p| {
            let p = p.clamp(cfg.prob_clip, 1.0 - cfg.prob_clip);
            p / (1.0 - p)
        })
        .collect();
    normalize_clip(&raw, cfg.clip_quantile)
}
