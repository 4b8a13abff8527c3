//! Metrics across test environments and across repeated seeds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::regress::{LinearModel, Predictor};

/// ℓ₁ distance between estimated and true coefficients (intercept excluded).
pub fn beta_error(est: &LinearModel, truth: &[f64]) -> Result<f64> {
    if est.beta.len() != truth.len() {
        return Err(Error::mismatch(
            "coefficient vector",
            truth.len(),
            est.beta.len(),
        ));
    }
    Ok(est.beta.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvLoss {
    Rmse,
    Misclassification,
}

impl EnvLoss {
    pub fn compute(self, pred: &[f64], y: &[f64]) -> Result<f64> {
        if pred.len() != y.len() {
            return Err(Error::mismatch("predictions", y.len(), pred.len()));
        }
        if y.is_empty() {
            return Err(Error::EmptyDataset("test environment has no rows".into()));
        }
        let n = y.len() as f64;
        Ok(match self {
            EnvLoss::Rmse => (pred
                .iter()
                .zip(y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / n)
                .sqrt(),
            EnvLoss::Misclassification => {
                pred.iter().zip(y).filter(|(p, t)| p != t).count() as f64 / n
            }
        })
    }
}

/// Environment label: the selection rate `r` for synthetic data or a value
/// of the environment column for tabular data.
pub type EnvKey = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub beta_error: Option<f64>,
    pub per_env_loss: BTreeMap<EnvKey, f64>,
    pub mean_error: f64,
    /// Sample standard deviation over environments; 0 with `degenerate` set
    /// when there is a single environment.
    pub std_error: f64,
    pub max_error: f64,
    pub degenerate: bool,
}

impl MetricsReport {
    pub fn from_losses(
        per_env_loss: BTreeMap<EnvKey, f64>,
        beta_error: Option<f64>,
    ) -> Result<Self> {
        let k = per_env_loss.len();
        if k == 0 {
            return Err(Error::invalid("at least one test environment is required"));
        }
        let mean = per_env_loss.values().sum::<f64>() / k as f64;
        let max = per_env_loss
            .values()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let min = per_env_loss.values().copied().fold(f64::INFINITY, f64::min);
        let (std, degenerate) = if k == 1 {
            (0.0, true)
        } else if min == max {
            // the summed mean can be off by an ulp, which would leave a tiny spread
            (0.0, false)
        } else {
            let ss: f64 = per_env_loss.values().map(|l| (l - mean) * (l - mean)).sum();
            (((ss / (k - 1) as f64).sqrt()), false)
        };
        Ok(Self {
            beta_error,
            per_env_loss,
            mean_error: mean,
            std_error: std,
            max_error: max,
            degenerate,
        })
    }
}

/// Evaluates `model` on each `(key, x, y)` environment.
pub fn env_errors<'a, P, I>(model: &P, tests: I, loss: EnvLoss) -> Result<MetricsReport>
where
    P: Predictor + ?Sized,
    I: IntoIterator<Item = (EnvKey, &'a Matrix, &'a [f64])>,
{
    let mut per_env = BTreeMap::new();
    for (key, x, y) in tests {
        if x.rows() == 0 || y.is_empty() {
            return Err(Error::EmptyDataset(format!("test environment {key}")));
        }
        let pred = model.predict(x)?;
        per_env.insert(key, loss.compute(&pred, y)?);
    }
    MetricsReport::from_losses(per_env, None)
}

/// Formats a selection rate as an environment key, e.g. `-2.5`.
pub fn rate_key(r: f64) -> EnvKey {
    format!("{r}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    /// `‖mean(β̂) − β‖₂`.
    pub bias: f64,
    /// Mean over seeds of `‖β̂ − mean(β̂)‖₂²`.
    pub variance: f64,
}

pub fn bias_variance_report(beta_hats: &[Vec<f64>], truth: &[f64]) -> Result<BiasVariance> {
    if beta_hats.len() < 2 {
        return Err(Error::invalid("bias/variance needs at least 2 estimates"));
    }
    let p = truth.len();
    for b in beta_hats {
        if b.len() != p {
            return Err(Error::mismatch("coefficient vector", p, b.len()));
        }
    }
    let s = beta_hats.len() as f64;
    let mean: Vec<f64> = (0..p)
        .map(|j| beta_hats.iter().map(|b| b[j]).sum::<f64>() / s)
        .collect();
    let bias = mean
        .iter()
        .zip(truth)
        .map(|(m, t)| (m - t) * (m - t))
        .sum::<f64>()
        .sqrt();
    let variance = beta_hats
        .iter()
        .map(|b| {
            b.iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / s;
    Ok(BiasVariance { bias, variance })
}
