//! Downstream estimators: (weighted) least squares, ridge, lasso, weighted
//! logistic regression and a weighted network regressor. Intercepts are
//! always fitted and never penalised.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mlp_train, Activation, LossKind, MlpModel, OutputHead, TrainConfig};
use crate::numeric::{dot, solve_spd, Matrix, Rng, Standardizer};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMeta {
    pub learner: String,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    #[serde(default)]
    pub meta: ModelMeta,
}

impl LinearModel {
    pub fn zeros(p: usize, intercept: f64) -> Self {
        Self {
            beta: vec![0.0; p],
            intercept,
            meta: ModelMeta::default(),
        }
    }

    pub fn with_meta(mut self, learner: impl Into<String>, seed: Option<u64>) -> Self {
        self.meta = ModelMeta {
            learner: learner.into(),
            seed,
        };
        self
    }

    /// `xβ + b`.
    pub fn decision(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.beta.len() {
            return Err(Error::mismatch("model input", self.beta.len(), x.cols()));
        }
        Ok(x.row_iter()
            .map(|r| dot(r, &self.beta) + self.intercept)
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub trait Predictor {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl Predictor for LinearModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.decision(x)
    }
}

impl Predictor for MlpModel {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// Logistic model whose predictions are class labels (probability ≥ 0.5 ⇒ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier(pub LinearModel);

impl Classifier {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .0
            .decision(x)?
            .into_iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect())
    }
}

impl Predictor for Classifier {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self
            .predict_proba(x)?
            .into_iter()
            .map(|p| if p >= 0.5 { 1.0 } else { 0.0 })
            .collect())
    }
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if y.len() != x.rows() {
        return Err(Error::mismatch("targets", x.rows(), y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("targets must be finite"));
    }
    Ok(())
}

fn check_weights(x: &Matrix, w: &[f64]) -> Result<f64> {
    if w.len() != x.rows() {
        return Err(Error::mismatch("sample weights", x.rows(), w.len()));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWeights(
            "sample weights must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("sample weights sum to zero".into()));
    }
    Ok(total)
}

/// Weighted centring and the normal equations `(X̃ᵀWX̃ + ridge·I) β = X̃ᵀW ỹ`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub lhs: Matrix,
    pub rhs: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub y_mean: f64,
}

pub fn wls_normal_equations(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    ridge: f64,
) -> Result<NormalEquations> {
    check_xy(x, y)?;
    let total = check_weights(x, w)?;
    if !(ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let p = x.cols();
    let mut x_mean = vec![0.0; p];
    let mut y_mean = 0.0;
    for ((r, wi), yi) in x.row_iter().zip(w).zip(y) {
        for (m, v) in x_mean.iter_mut().zip(r) {
            *m += wi * v;
        }
        y_mean += wi * yi;
    }
    x_mean.iter_mut().for_each(|m| *m /= total);
    y_mean /= total;

    let mut lhs = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut z = vec![0.0; p];
    for ((r, &wi), yi) in x.row_iter().zip(w).zip(y) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..p {
            z[j] = r[j] - x_mean[j];
        }
        let yc = wi * (yi - y_mean);
        for a in 0..p {
            let za = wi * z[a];
            rhs[a] += yc * z[a];
            let row = lhs.row_mut(a);
            for b in a..p {
                row[b] += za * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            let v = lhs.get(b, a);
            lhs.set(a, b, v);
        }
        let d = lhs.get(a, a) + ridge;
        lhs.set(a, a, d);
    }
    Ok(NormalEquations {
        lhs,
        rhs,
        x_mean,
        y_mean,
    })
}

/// Minimises `Σ wᵢ (yᵢ − xᵢᵀβ − b)² + ridge·‖β‖²`.
pub fn wls_fit(x: &Matrix, y: &[f64], w: &[f64], ridge: f64) -> Result<LinearModel> {
    if ridge == 0.0 && x.rows() <= x.cols() {
        return Err(Error::invalid(format!(
            "least squares needs more samples than columns (n = {}, p = {}); set ridge > 0",
            x.rows(),
            x.cols()
        )));
    }
    let ne = wls_normal_equations(x, y, w, ridge)?;
    let beta = solve_spd(&ne.lhs, &ne.rhs).map_err(|e| Error::Singular {
        context: format!("weighted least squares: {e}"),
        advice: "the design is rank deficient; set ridge > 0".into(),
    })?;
    let intercept = ne.y_mean - dot(&ne.x_mean, &beta);
    Ok(LinearModel {
        beta,
        intercept,
        meta: ModelMeta::default(),
    })
}

pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    wls_fit(x, y, &vec![1.0; x.rows()], 0.0)
}

pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel> {
    wls_fit(x, y, &vec![1.0; x.rows()], lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub model: LinearModel,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective on the standardised problem after each sweep.
    pub objective_history: Vec<f64>,
}

/// `(1/2n)‖ỹ − Zβ‖² + λ‖β‖₁` on standardised columns `Z` and centred `ỹ`.
pub fn lasso_objective(z: &Matrix, yc: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = z.rows() as f64;
    let rss: f64 = z
        .row_iter()
        .zip(yc)
        .map(|(r, y)| {
            let e = y - dot(r, beta);
            e * e
        })
        .sum();
    rss / (2.0 * n) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Smallest penalty for which the lasso solution is all zero.
pub fn lasso_lambda_max(x: &Matrix, y: &[f64]) -> Result<f64> {
    check_xy(x, y)?;
    let s = Standardizer::fit(x)?;
    let z = s.transform(x)?;
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let n = x.rows() as f64;
    Ok((0..x.cols())
        .map(|j| {
            (z.row_iter()
                .zip(y)
                .map(|(r, yi)| r[j] * (yi - ym))
                .sum::<f64>()
                / n)
                .abs()
        })
        .fold(0.0, f64::max))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on standardised columns. Coefficients are
/// returned on the original scale. Non-convergence is reported through
/// [`LassoFit::converged`], not as an error.
pub fn lasso_fit(
    x: &Matrix,
    y: &[f64],
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<LassoFit> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lasso penalty must be nonnegative"));
    }
    let s = Standardizer::fit(x)?;
    let z = s.transform(x)?;
    let (n, p) = (x.rows(), x.cols());
    let nf = n as f64;
    let ym = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let yc = resid.clone();
    let cols: Vec<Vec<f64>> = (0..p).map(|j| z.column(j)).collect();
    let mut beta = vec![0.0; p];
    let mut history = Vec::new();
    let mut prev = lasso_objective(&z, &yc, &beta, lambda);
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iters {
        sweeps += 1;
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            let col = &cols[j];
            let rho = dot(col, &resid) / nf + beta[j];
            let new = soft_threshold(rho, lambda);
            let delta = new - beta[j];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                beta[j] = new;
                max_step = max_step.max(delta.abs());
            }
        }
        let obj = lasso_objective(&z, &yc, &beta, lambda);
        history.push(obj);
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel <= tol || max_step == 0.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("lasso did not converge in {max_iters} sweeps");
    }
    let beta_orig: Vec<f64> = beta.iter().zip(&s.sds).map(|(b, sd)| b / sd).collect();
    let intercept = ym - dot(&beta_orig, &s.means);
    Ok(LassoFit {
        model: LinearModel {
            beta: beta_orig,
            intercept,
            meta: ModelMeta::default(),
        },
        converged,
        sweeps,
        objective_history: history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm falls below this.
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            max_iters: 5000,
            tol: 1e-6,
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct LogisticProblem<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    w: &'a [f64],
    total: f64,
    ridge: f64,
}

impl LogisticProblem<'_> {
    /// Parameters are `[β, b]`.
    fn loss_grad(&self, params: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = self.x.cols();
        let (beta, b) = params.split_at(p);
        let mut loss = 0.0;
        let mut g = vec![0.0; p + 1];
        for ((r, yi), wi) in self.x.row_iter().zip(self.y).zip(self.w) {
            if *wi == 0.0 {
                continue;
            }
            let z = dot(r, beta) + b[0];
            loss += wi * (softplus(z) - yi * z);
            let d = wi * (sigmoid(z) - yi);
            for (gj, v) in g.iter_mut().zip(r) {
                *gj += d * v;
            }
            g[p] += d;
        }
        loss /= self.total;
        loss += 0.5 * self.ridge * dot(beta, beta);
        if let Some(out) = grad {
            for j in 0..p {
                out[j] = g[j] / self.total + self.ridge * beta[j];
            }
            out[p] = g[p] / self.total;
        }
        loss
    }
}

/// Gradient descent with backtracking on the weighted mean negative
/// log-likelihood plus `(ridge/2)‖β‖²`.
pub fn weighted_logistic_fit(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    ridge: f64,
    cfg: &LogisticConfig,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    let total = check_weights(x, w)?;
    if let Some((row, &v)) = y.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
        return Err(Error::InvalidTarget { row, value: v });
    }
    let has = |c: f64| y.iter().zip(w).any(|(yi, wi)| *yi == c && *wi > 0.0);
    if !has(0.0) || !has(1.0) {
        return Err(Error::SingleClass);
    }
    if !(ridge >= 0.0) || !(cfg.learning_rate > 0.0) {
        return Err(Error::invalid("ridge must be >= 0 and learning_rate > 0"));
    }
    let problem = LogisticProblem {
        x,
        y,
        w,
        total,
        ridge,
    };
    let p = x.cols();
    let mut params = vec![0.0; p + 1];
    let mut grad = vec![0.0; p + 1];
    let mut trial = vec![0.0; p + 1];
    let mut loss = problem.loss_grad(&params, Some(&mut grad));
    let mut step = cfg.learning_rate;
    for iter in 0..cfg.max_iters {
        let gnorm2 = dot(&grad, &grad);
        if gnorm2.sqrt() <= cfg.tol {
            break;
        }
        loop {
            for k in 0..=p {
                trial[k] = params[k] - step * grad[k];
            }
            let l = problem.loss_grad(&trial, None);
            if l <= loss - 0.5 * step * gnorm2 || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }
        params.copy_from_slice(&trial);
        loss = problem.loss_grad(&params, Some(&mut grad));
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "logistic loss".into(),
                iteration: iter,
            });
        }
        step = (step * 2.0).min(cfg.learning_rate);
    }
    let intercept = params.pop().unwrap_or(0.0);
    Ok(LinearModel {
        beta: params,
        intercept,
        meta: ModelMeta::default(),
    })
}

pub fn logistic_fit(
    x: &Matrix,
    y: &[f64],
    ridge: f64,
    cfg: &LogisticConfig,
) -> Result<LinearModel> {
    weighted_logistic_fit(x, y, &vec![1.0; x.rows()], ridge, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpRegressConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
}

impl Default for MlpRegressConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Relu,
            train: TrainConfig {
                optimizer: crate::nn::Optimizer::Adam,
                learning_rate: 0.005,
                max_epochs: 200,
                early_stop_patience: 15,
                ..TrainConfig::default()
            },
        }
    }
}

/// Weighted mean-squared-error network regression.
pub fn mlp_regress_fit(
    x: &Matrix,
    y: &[f64],
    w: Option<&[f64]>,
    cfg: &MlpRegressConfig,
    rng: &mut Rng,
) -> Result<MlpModel> {
    let mut sizes = vec![x.cols()];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let init = MlpModel::init(&sizes, cfg.activation, OutputHead::Linear, rng)?;
    mlp_train(&init, x, y, w, LossKind::WeightedMse, &cfg.train, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn design(n: usize, p: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn uniform_wls_equals_ols() {
        let x = design(60, 3, 1);
        let y: Vec<f64> = x
            .row_iter()
            .map(|r| r[0] - 2.0 * r[2] + 0.3 * r[1] * r[1])
            .collect();
        let a = wls_fit(&x, &y, &vec![1.0; 60], 0.0).unwrap();
        let b = ols_fit(&x, &y).unwrap();
        for (u, v) in a.beta.iter().zip(&b.beta) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_recovery_under_any_weights() {
        let x = design(40, 2, 2);
        let y: Vec<f64> = x.row_iter().map(|r| 2.0 * r[0] - r[1]).collect();
        let w: Vec<f64> = (0..40).map(|i| 0.1 + (i % 7) as f64).collect();
        let m = wls_fit(&x, &y, &w, 0.0).unwrap();
        assert!((m.beta[0] - 2.0).abs() < 1e-8 && (m.beta[1] + 1.0).abs() < 1e-8);
        assert!(m.intercept.abs() < 1e-8);
    }

    #[test]
    fn normal_equation_residual_small() {
        let x = design(80, 4, 3);
        let y: Vec<f64> = x.row_iter().map(|r| r.iter().sum::<f64>() + 0.5).collect();
        let w: Vec<f64> = (0..80).map(|i| (i % 3) as f64 + 0.5).collect();
        let m = wls_fit(&x, &y, &w, 0.7).unwrap();
        let ne = wls_normal_equations(&x, &y, &w, 0.7).unwrap();
        let lhs = ne.lhs.matvec(&m.beta).unwrap();
        let resid = lhs
            .iter()
            .zip(&ne.rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(resid <= 1e-8);
    }

    #[test]
    fn singular_design_suggests_ridge() {
        let x = Matrix::from_fn(10, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        match ols_fit(&x, &y) {
            Err(Error::Singular { advice, .. }) => assert!(advice.contains("ridge")),
            other => panic!("{other:?}"),
        }
        assert!(ridge_fit(&x, &y, 1.0).is_ok());
    }

    #[test]
    fn ridge_zero_is_ols() {
        let x = design(50, 3, 4);
        let y: Vec<f64> = x.row_iter().map(|r| r[0] * 0.5 + r[1].sin()).collect();
        let a = ridge_fit(&x, &y, 0.0).unwrap();
        let b = ols_fit(&x, &y).unwrap();
        assert!(a
            .beta
            .iter()
            .zip(&b.beta)
            .all(|(u, v)| (u - v).abs() < 1e-10));
    }

    #[test]
    fn ridge_norm_shrinks_with_lambda() {
        let x = design(50, 3, 5);
        let y: Vec<f64> = x.row_iter().map(|r| 3.0 * r[0] - r[1] + r[2]).collect();
        let norms: Vec<f64> = [0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&l| {
                let m = ridge_fit(&x, &y, l).unwrap();
                dot(&m.beta, &m.beta).sqrt()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn lasso_above_lambda_max_is_zero() {
        let x = design(50, 4, 6);
        let y: Vec<f64> = x.row_iter().map(|r| r[0] - r[3]).collect();
        let lmax = lasso_lambda_max(&x, &y).unwrap();
        let fit = lasso_fit(&x, &y, lmax, 1000, 1e-7).unwrap();
        assert!(fit.model.beta.iter().all(|b| *b == 0.0));
        let fit = lasso_fit(&x, &y, 0.9 * lmax, 1000, 1e-7).unwrap();
        assert!(fit.model.beta.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn lasso_without_penalty_is_ols() {
        let x = design(200, 3, 7);
        let mut rng = seeded_rng(70);
        let y: Vec<f64> = x
            .row_iter()
            .map(|r| r[0] - 0.5 * r[1] + 2.0 * r[2] + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let fit = lasso_fit(&x, &y, 0.0, 10_000, 1e-7).unwrap();
        let ols = ols_fit(&x, &y).unwrap();
        for (a, b) in fit.model.beta.iter().zip(&ols.beta) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((fit.model.intercept - ols.intercept).abs() < 1e-6);
    }

    #[test]
    fn lasso_objective_monotone() {
        let base = design(100, 5, 8);
        // correlated columns make coordinate descent take several sweeps
        let x = Matrix::from_fn(100, 5, |i, j| base.get(i, j) + 0.8 * base.get(i, 0));
        let y: Vec<f64> = x.row_iter().map(|r| r[1] - r[2] + 0.5 * r[4]).collect();
        let fit = lasso_fit(&x, &y, 0.05, 1000, 1e-12).unwrap();
        assert!(fit
            .objective_history
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-15));
        assert!(fit.converged);
    }

    #[test]
    fn lasso_reports_non_convergence() {
        let base = design(100, 5, 9);
        let x = Matrix::from_fn(100, 5, |i, j| base.get(i, j) + 3.0 * base.get(i, 0));
        let y: Vec<f64> = x.row_iter().map(|r| r[1] - r[2]).collect();
        let fit = lasso_fit(&x, &y, 1e-4, 1, 1e-15).unwrap();
        assert!(!fit.converged);
    }

    fn blobs(n: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = seeded_rng(seed);
        let mut y = Vec::with_capacity(n);
        let x = Matrix::from_fn(n, 2, |i, _| {
            let c = if i % 2 == 0 { 2.5 } else { -2.5 };
            c + 0.7 * rng.sample::<f64, _>(StandardNormal)
        });
        for i in 0..n {
            y.push(if i % 2 == 0 { 1.0 } else { 0.0 });
        }
        (x, y)
    }

    #[test]
    fn logistic_separates_blobs() {
        let (x, y) = blobs(200, 10);
        let m = logistic_fit(&x, &y, 1e-2, &LogisticConfig::default()).unwrap();
        let pred = Classifier(m).predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn logistic_label_flip_negates() {
        let (x, mut y) = blobs(100, 11);
        // overlap a few points so the fit is not driven only by the penalty
        y[0] = 0.0;
        y[1] = 1.0;
        let cfg = LogisticConfig::default();
        let a = logistic_fit(&x, &y, 0.1, &cfg).unwrap();
        let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let b = logistic_fit(&x, &flipped, 0.1, &cfg).unwrap();
        for (u, v) in a.beta.iter().zip(&b.beta) {
            assert!((u + v).abs() < 1e-6, "{u} vs {v}");
        }
        assert!((a.intercept + b.intercept).abs() < 1e-6);
    }

    #[test]
    fn logistic_unit_weights_match_unweighted() {
        let (x, y) = blobs(60, 12);
        let cfg = LogisticConfig::default();
        let a = weighted_logistic_fit(&x, &y, &vec![1.0; 60], 0.1, &cfg).unwrap();
        let b = logistic_fit(&x, &y, 0.1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logistic_errors() {
        let x = design(10, 2, 13);
        assert!(matches!(
            logistic_fit(&x, &[1.0; 10], 0.1, &LogisticConfig::default()),
            Err(Error::SingleClass)
        ));
        let mut y = vec![0.0; 10];
        y[3] = 2.0;
        assert!(matches!(
            logistic_fit(&x, &y, 0.1, &LogisticConfig::default()),
            Err(Error::InvalidTarget { row: 3, .. })
        ));
    }

    #[test]
    fn zero_model_predicts_intercept() {
        let m = LinearModel::zeros(3, 1.25);
        let x = design(4, 3, 14);
        assert_eq!(m.predict(&x).unwrap(), vec![1.25; 4]);
        assert!(m.predict(&design(4, 2, 1)).is_err());
    }

    #[test]
    fn prediction_by_hand() {
        let m = LinearModel {
            beta: vec![2.0, -1.0],
            intercept: 0.5,
            meta: ModelMeta::default(),
        };
        let x = Matrix::from_rows(&[vec![1.0, 3.0], vec![-2.0, 0.5]]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![-0.5, -4.0]);
        let c = Classifier(m);
        assert_eq!(c.predict(&x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn model_json_round_trip() {
        let m = LinearModel {
            beta: vec![0.1, -0.2],
            intercept: 3.0,
            meta: ModelMeta {
                learner: "dwr+sawa".into(),
                seed: Some(7),
            },
        };
        assert_eq!(LinearModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
