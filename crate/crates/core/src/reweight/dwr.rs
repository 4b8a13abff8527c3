//! Decorrelation weighting: minimise the sum of squared off-diagonal weighted
//! covariances over `w = n · softmax(θ)`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::weights::{weighted_cov_matrix, WeightSet};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DwrConfig {
    /// Step size applied to the per-sample gradient `n · ∂J/∂θ`.
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the objective improves by less than this fraction over `window` iterations.
    pub objective_tol: f64,
    pub window: usize,
    /// Standard deviation of the Gaussian initialisation of `θ`.
    pub init_sd: f64,
}

impl Default for DwrConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_iters: 300,
            objective_tol: 1e-6,
            window: 50,
            init_sd: 1.0,
        }
    }
}

impl DwrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_iters == 0 || self.window == 0 {
            return Err(Error::invalid(
                "dwr learning_rate, max_iters and window must be positive",
            ));
        }
        if !(self.objective_tol >= 0.0) || !(self.init_sd >= 0.0) {
            return Err(Error::invalid(
                "dwr objective_tol and init_sd must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// Summary of one optimisation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DwrTrace {
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
}

/// `Σ_{i≠j} Cov(Xᵢ, Xⱼ; w)²` over ordered pairs.
pub fn dwr_objective(x: &Matrix, w: &WeightSet) -> Result<f64> {
    if x.cols() < 2 {
        return Err(Error::invalid(
            "decorrelation objective needs at least two columns",
        ));
    }
    if x.rows() < 2 {
        return Err(Error::invalid(
            "decorrelation objective needs at least two rows",
        ));
    }
    let c = weighted_cov_matrix(x, w.as_slice())?;
    Ok(off_diagonal_sq(&c))
}

fn off_diagonal_sq(c: &Matrix) -> f64 {
    let p = c.rows();
    let mut s = 0.0;
    for a in 0..p {
        for b in a + 1..p {
            s += c.get(a, b) * c.get(a, b);
        }
    }
    2.0 * s
}

fn softmax_weights(theta: &[f64], out: &mut [f64]) {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, t) in out.iter_mut().zip(theta) {
        *o = (t - max).exp();
        total += *o;
    }
    let scale = theta.len() as f64 / total;
    out.iter_mut().for_each(|o| *o *= scale);
}

fn init_theta(n: usize, cfg: &DwrConfig, rng: &mut Rng) -> Vec<f64> {
    if cfg.init_sd == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, cfg.init_sd).expect("init_sd validated");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// The starting weights `n · softmax(θ₀)` that [`dwr_learn`] draws from the
/// same stream state.
pub fn dwr_initial_weights(n: usize, cfg: &DwrConfig, rng: &mut Rng) -> Result<WeightSet> {
    cfg.validate()?;
    let theta = init_theta(n, cfg, rng);
    let mut w = vec![0.0; n];
    softmax_weights(&theta, &mut w);
    WeightSet::new(w)
}

pub fn dwr_learn(x: &Matrix, cfg: &DwrConfig, rng: &mut Rng) -> Result<WeightSet> {
    dwr_learn_traced(x, cfg, rng).map(|(w, _)| w)
}

pub fn dwr_learn_traced(
    x: &Matrix,
    cfg: &DwrConfig,
    rng: &mut Rng,
) -> Result<(WeightSet, DwrTrace)> {
    cfg.validate()?;
    let (n, p) = (x.rows(), x.cols());
    if p < 2 {
        return Err(Error::invalid("decorrelation needs at least two columns"));
    }
    if n <= p {
        return Err(Error::invalid(format!(
            "decorrelation needs more samples than columns (n = {n}, p = {p})"
        )));
    }
    let mut theta = init_theta(n, cfg, rng);
    let mut w = vec![0.0; n];
    softmax_weights(&theta, &mut w);

    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iters.min(100_000) + 1);
    let mut ghat = vec![0.0; n];
    let mut z = vec![0.0; p];
    let mut cz = vec![0.0; p];
    let mut iterations = 0;
    let mut best_w = w.clone();
    let mut best_obj = f64::INFINITY;

    loop {
        let c = weighted_cov_matrix(x, &w)?;
        let obj = off_diagonal_sq(&c);
        if !obj.is_finite() {
            return Err(Error::NonFinite {
                what: "decorrelation objective".into(),
                iteration: iterations,
            });
        }
        if obj < best_obj {
            best_obj = obj;
            best_w.copy_from_slice(&w);
        }
        history.push(obj);
        if iterations >= cfg.max_iters || obj <= 1e-15 {
            break;
        }
        if history.len() > cfg.window {
            let past = history[history.len() - 1 - cfg.window];
            if past - obj <= cfg.objective_tol * past {
                break;
            }
        }

        // n ∂J/∂w_k = 2 (z_kᵀ C_off z_k − mᵀ C_off m); the constant term cancels
        // under the softmax projection below.
        let means = super::weights::weighted_means(x, &w);
        let mut wg = 0.0;
        for (k, r) in x.row_iter().enumerate() {
            for j in 0..p {
                z[j] = r[j] - means[j];
            }
            for a in 0..p {
                let row = c.row(a);
                let mut s = 0.0;
                for b in 0..p {
                    if a != b {
                        s += row[b] * z[b];
                    }
                }
                cz[a] = s;
            }
            let g = 2.0 * z.iter().zip(&cz).map(|(u, v)| u * v).sum::<f64>();
            ghat[k] = g;
            wg += w[k] * g;
        }
        wg /= n as f64;
        for k in 0..n {
            theta[k] -= cfg.learning_rate * (ghat[k] - wg);
        }
        softmax_weights(&theta, &mut w);
        iterations += 1;
    }

    let trace = DwrTrace {
        initial_objective: history[0],
        final_objective: best_obj,
        iterations,
    };
    Ok((WeightSet::new(best_w)?, trace))
}
