//! WebAssembly bindings for the static demo page in `www/`. Each export
//! takes plain numbers and returns a JSON document for the page to plot.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sawa_core::datagen::{
    default_r_test_grid, make_env_suite, sample_environment, EnvironmentSpec, SyntheticSpec,
};
use sawa_core::eval::{beta_error, EnvLoss};
use sawa_core::numeric::{correlation, derive_seed, seeded_rng};
use sawa_core::regress::{ols_fit, wls_fit, Predictor};
use sawa_core::reweight::{effective_sample_size, DwrConfig, WeightSet};
use sawa_core::sawa::{average_weights, pairwise_diversity, sawa_run, Learner, SawaConfig};
use sawa_core::Result;

const P_S: usize = 5;
const P_V: usize = 5;
const R_TRAIN: f64 = 2.1;
const MAX_POINTS: usize = 2000;
const MAX_K: usize = 20;

fn spec(rho_s: f64) -> SyntheticSpec {
    SyntheticSpec::linear(P_S, P_V, rho_s, 0.1)
}

#[derive(Debug, Serialize)]
pub struct Scatter {
    pub r: f64,
    pub v_b: Vec<f64>,
    pub y: Vec<f64>,
    pub corr: f64,
}

/// Biased unstable variable against the outcome in one environment.
pub fn scatter(r: f64, n: usize, seed: u64) -> Result<Scatter> {
    let n = n.clamp(50, MAX_POINTS);
    let env = EnvironmentSpec::new(r, vec![0])?;
    let ds = sample_environment(&spec(0.9), &env, n, &mut seeded_rng(seed))?;
    let v_b = ds.unstable_column(0);
    let corr = correlation(&v_b, &ds.y);
    Ok(Scatter {
        r,
        v_b,
        y: ds.y,
        corr,
    })
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub k: usize,
    pub ess: f64,
    /// Pairwise diversity of the first `k` members (absent for `k = 1`).
    pub diversity: Option<f64>,
    pub v_b_coef: f64,
    pub beta_error: f64,
    pub mean_rmse: f64,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub ols_v_b_coef: f64,
    pub ols_beta_error: f64,
    pub ols_mean_rmse: f64,
    pub points: Vec<SweepPoint>,
    /// Sorted weights of the single run and of the full ensemble.
    pub single_weights: Vec<f64>,
    pub ensemble_weights: Vec<f64>,
}

/// Learns `k_max` decorrelation weight sets on one biased training set and
/// reports how averaging the first `k` of them changes the weighted fit.
pub fn sweep(k_max: usize, n: usize, rho_s: f64, seed: u64) -> Result<Sweep> {
    let k_max = k_max.clamp(1, MAX_K);
    let n = n.clamp(200, MAX_POINTS);
    let spec = spec(rho_s);
    let truth = spec.true_beta();
    let mut rng = seeded_rng(seed);
    let suite = make_env_suite(
        &spec,
        &[0],
        n,
        R_TRAIN,
        n / 2,
        &default_r_test_grid(),
        &mut rng,
    )?;
    let (x, y) = (&suite.train.x, &suite.train.y);
    let mean_rmse = |m: &dyn Predictor| -> Result<f64> {
        let mut total = 0.0;
        for (_, t) in &suite.tests {
            total += EnvLoss::Rmse.compute(&m.predict(&t.x)?, &t.y)?;
        }
        Ok(total / suite.tests.len() as f64)
    };
    let ols = ols_fit(x, y)?;
    let v_b = P_S;
    let (_, members) = sawa_run(
        x,
        &SawaConfig::new(
            k_max,
            Learner::Dwr(DwrConfig::default()),
            derive_seed(seed, 1),
        ),
    )?;
    let mut points = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let ens = average_weights(&members[..k])?;
        let m = wls_fit(x, y, ens.as_slice(), 0.0)?;
        points.push(SweepPoint {
            k,
            ess: effective_sample_size(&ens),
            diversity: if k >= 2 {
                Some(pairwise_diversity(&members[..k])?)
            } else {
                None
            },
            v_b_coef: m.beta[v_b],
            beta_error: beta_error(&m, &truth)?,
            mean_rmse: mean_rmse(&m)?,
        });
    }
    let sorted = |w: &WeightSet| {
        let mut v = w.as_slice().to_vec();
        v.sort_by(f64::total_cmp);
        v
    };
    Ok(Sweep {
        ols_v_b_coef: ols.beta[v_b],
        ols_beta_error: beta_error(&ols, &truth)?,
        ols_mean_rmse: mean_rmse(&ols)?,
        single_weights: sorted(&members[0]),
        ensemble_weights: sorted(&average_weights(&members)?),
        points,
    })
}

#[derive(Debug, Serialize)]
pub struct EnvCurve {
    pub r_test: Vec<f64>,
    pub ols: Vec<f64>,
    pub single: Vec<f64>,
    pub ensemble: Vec<f64>,
}

/// Test RMSE per environment for OLS, one weighted fit and the `k`-member average.
pub fn env_curve(k: usize, n: usize, seed: u64) -> Result<EnvCurve> {
    let k = k.clamp(1, MAX_K);
    let n = n.clamp(200, MAX_POINTS);
    let grid = default_r_test_grid();
    let spec = spec(0.9);
    let suite = make_env_suite(&spec, &[0], n, R_TRAIN, n / 2, &grid, &mut seeded_rng(seed))?;
    let (x, y) = (&suite.train.x, &suite.train.y);
    let (ens, members) = sawa_run(
        x,
        &SawaConfig::new(k, Learner::Dwr(DwrConfig::default()), derive_seed(seed, 1)),
    )?;
    let models = [
        ols_fit(x, y)?,
        wls_fit(x, y, members[0].as_slice(), 0.0)?,
        wls_fit(x, y, ens.as_slice(), 0.0)?,
    ];
    let mut curves: [Vec<f64>; 3] = Default::default();
    for (_, t) in &suite.tests {
        for (c, m) in curves.iter_mut().zip(&models) {
            c.push(EnvLoss::Rmse.compute(&m.predict(&t.x)?, &t.y)?);
        }
    }
    let [ols, single, ensemble] = curves;
    Ok(EnvCurve {
        r_test: grid,
        ols,
        single,
        ensemble,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = selectionScatter)]
pub fn selection_scatter(r: f64, n: usize, seed: u32) -> Result<String, JsError> {
    to_js(scatter(r, n, seed as u64))
}

#[wasm_bindgen(js_name = sawaSweep)]
pub fn sawa_sweep(k_max: usize, n: usize, rho_s: f64, seed: u32) -> Result<String, JsError> {
    to_js(sweep(k_max, n, rho_s, seed as u64))
}

#[wasm_bindgen(js_name = environmentCurve)]
pub fn environment_curve(k: usize, n: usize, seed: u32) -> Result<String, JsError> {
    to_js(env_curve(k, n, seed as u64))
}
