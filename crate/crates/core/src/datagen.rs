//! Synthetic covariates with block-equicorrelated structure, outcomes that
//! depend on the stable block only, and selection-bias environments that
//! induce a spurious link between chosen unstable variables and the outcome.

use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpModel, OutputHead};
use crate::numeric::{mvn_sample, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeMode {
    /// `Sβ_s + S₁S₂S₃`.
    LinearPoly,
    /// Output of a fixed random network applied to `S`.
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub p_s: usize,
    pub p_v: usize,
    pub rho_s: f64,
    pub rho_v: f64,
    pub beta_s: Vec<f64>,
    pub noise_sd: f64,
    pub outcome_mode: OutcomeMode,
    pub gen_net: Option<MlpModel>,
}

pub const DEFAULT_NOISE_SD: f64 = 0.3;

/// `(1, −1, 1, …)` scaled to unit Euclidean norm.
pub fn default_beta_s(p_s: usize) -> Vec<f64> {
    let scale = 1.0 / (p_s as f64).sqrt();
    (0..p_s)
        .map(|i| if i % 2 == 0 { scale } else { -scale })
        .collect()
}

impl SyntheticSpec {
    /// Linear-plus-polynomial outcome with default coefficients and noise.
    pub fn linear(p_s: usize, p_v: usize, rho_s: f64, rho_v: f64) -> Self {
        Self {
            p_s,
            p_v,
            rho_s,
            rho_v,
            beta_s: default_beta_s(p_s),
            noise_sd: DEFAULT_NOISE_SD,
            outcome_mode: OutcomeMode::LinearPoly,
            gen_net: None,
        }
    }

    /// Nonlinear outcome from a freshly initialised `(p_s, 16, 1)` tanh network.
    pub fn nonlinear(
        p_s: usize,
        p_v: usize,
        rho_s: f64,
        rho_v: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let net = MlpModel::init(&[p_s, 16, 1], Activation::Tanh, OutputHead::Linear, rng)?;
        Ok(Self {
            outcome_mode: OutcomeMode::Mlp,
            gen_net: Some(net),
            ..Self::linear(p_s, p_v, rho_s, rho_v)
        })
    }

    pub fn p(&self) -> usize {
        self.p_s + self.p_v
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_s == 0 {
            return Err(Error::invalid("p_s must be at least 1"));
        }
        for (name, rho) in [("rho_s", self.rho_s), ("rho_v", self.rho_v)] {
            if !(0.0..1.0).contains(&rho) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1), got {rho}"
                )));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd must be nonnegative"));
        }
        match self.outcome_mode {
            OutcomeMode::LinearPoly => {
                if self.p_s < 3 {
                    return Err(Error::invalid(format!(
                        "the polynomial term uses three stable columns, but p_s = {}",
                        self.p_s
                    )));
                }
                if self.beta_s.len() != self.p_s {
                    return Err(Error::mismatch("beta_s", self.p_s, self.beta_s.len()));
                }
            }
            OutcomeMode::Mlp => match &self.gen_net {
                None => {
                    return Err(Error::invalid(
                        "mlp outcome mode requires a generator network",
                    ))
                }
                Some(net) if net.input_dim() != self.p_s => {
                    return Err(Error::mismatch(
                        "generator network input",
                        self.p_s,
                        net.input_dim(),
                    ))
                }
                Some(_) => {}
            },
        }
        Ok(())
    }

    /// `Diag(Σ_S, Σ_V)` with unit diagonals and constant off-diagonals in each block.
    pub fn covariance(&self) -> Matrix {
        let p = self.p();
        Matrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else if i < self.p_s && j < self.p_s {
                self.rho_s
            } else if i >= self.p_s && j >= self.p_s {
                self.rho_v
            } else {
                0.0
            }
        })
    }

    /// Noiseless outcome for each row of a full covariate matrix.
    pub fn outcome(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self.outcome_mode {
            OutcomeMode::LinearPoly => Ok(x
                .row_iter()
                .map(|r| {
                    let lin: f64 = r[..self.p_s]
                        .iter()
                        .zip(&self.beta_s)
                        .map(|(a, b)| a * b)
                        .sum();
                    lin + r[0] * r[1] * r[2]
                })
                .collect()),
            OutcomeMode::Mlp => {
                let net = self.gen_net.as_ref().ok_or_else(|| {
                    Error::invalid("mlp outcome mode requires a generator network")
                })?;
                let stable: Vec<usize> = (0..self.p_s).collect();
                net.forward(&x.select_columns(&stable))
            }
        }
    }

    /// True coefficients on `[S, V]` (zero on every unstable column).
    pub fn true_beta(&self) -> Vec<f64> {
        let mut b = self.beta_s.clone();
        b.resize(self.p(), 0.0);
        b
    }
}

/// One selection-bias environment: bias rate `r` and the unstable columns it acts on.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSpec {
    r: f64,
    v_b: Vec<usize>,
}

impl EnvironmentSpec {
    pub fn new(r: f64, v_b: Vec<usize>) -> Result<Self> {
        validate_rate(r)?;
        if v_b.is_empty() {
            return Err(Error::invalid("the biased variable set must not be empty"));
        }
        Ok(Self { r, v_b })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    /// Indices into the unstable block.
    pub fn v_b(&self) -> &[usize] {
        &self.v_b
    }
}

pub fn validate_rate(r: f64) -> Result<()> {
    if !(r.abs() > 1.0 && r.abs() <= 3.0) {
        return Err(Error::invalid(format!(
            "bias rate must satisfy 1 < |r| <= 3, got {r}"
        )));
    }
    Ok(())
}

/// Default biased set: the first `max(1, ⌊0.2 p⌋)` unstable variables.
pub fn default_biased(p: usize, p_v: usize) -> Vec<usize> {
    let k = ((0.2 * p as f64).floor() as usize).max(1).min(p_v);
    (0..k).collect()
}

/// Test-environment bias rates used when none are given.
pub fn default_r_test_grid() -> Vec<f64> {
    vec![-3.0, -2.5, -2.0, -1.5, 1.5, 2.0, 2.5, 3.0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Outcome before noise; unknown for data read back from CSV.
    pub f_noiseless: Option<Vec<f64>>,
    pub stable_idx: Vec<usize>,
    pub unstable_idx: Vec<usize>,
}

impl LabeledDataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn select_rows(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            f_noiseless: self
                .f_noiseless
                .as_ref()
                .map(|f| idx.iter().map(|&i| f[i]).collect()),
            stable_idx: self.stable_idx.clone(),
            unstable_idx: self.unstable_idx.clone(),
        }
    }

    fn append(&mut self, other: LabeledDataset) -> Result<()> {
        self.x = self.x.vstack(&other.x)?;
        self.y.extend(other.y);
        match (&mut self.f_noiseless, other.f_noiseless) {
            (Some(a), Some(b)) => a.extend(b),
            _ => self.f_noiseless = None,
        }
        Ok(())
    }

    /// Column of the `k`-th unstable variable.
    pub fn unstable_column(&self, k: usize) -> Vec<f64> {
        self.x.column(self.unstable_idx[k])
    }

    /// CSV with header `S1..Sps,V1..Vpv,Y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut names = vec![String::new(); self.p()];
        for (k, &j) in self.stable_idx.iter().enumerate() {
            names[j] = format!("S{}", k + 1);
        }
        for (k, &j) in self.unstable_idx.iter().enumerate() {
            names[j] = format!("V{}", k + 1);
        }
        names.push("Y".into());
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(&names)?;
        for (r, y) in self.x.row_iter().zip(&self.y) {
            let rec: Vec<String> = r
                .iter()
                .chain(std::iter::once(y))
                .map(f64::to_string)
                .collect();
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let y_col = headers
            .iter()
            .position(|h| h == "Y")
            .ok_or_else(|| Error::MissingColumn("Y".into()))?;
        let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != y_col).collect();
        let mut stable_idx = Vec::new();
        let mut unstable_idx = Vec::new();
        for (j, &c) in feature_cols.iter().enumerate() {
            match headers[c].chars().next() {
                Some('S') => stable_idx.push(j),
                Some('V') => unstable_idx.push(j),
                _ => {
                    return Err(Error::invalid(format!(
                        "column `{}` is neither S<k> nor V<k>",
                        &headers[c]
                    )))
                }
            }
        }
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |c: usize| -> Result<f64> {
                let s = rec.get(c).unwrap_or("");
                s.trim().parse().map_err(|_| Error::NonNumeric {
                    column: headers[c].to_string(),
                    row,
                    value: s.into(),
                })
            };
            for &c in &feature_cols {
                data.push(parse(c)?);
            }
            y.push(parse(y_col)?);
        }
        if y.is_empty() {
            return Err(Error::EmptyDataset("reading synthetic CSV".into()));
        }
        Ok(Self {
            x: Matrix::new(y.len(), feature_cols.len(), data)?,
            y,
            f_noiseless: None,
            stable_idx,
            unstable_idx,
        })
    }
}

/// Draws `n` unbiased samples.
pub fn gen_base(spec: &SyntheticSpec, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let x = mvn_sample(&vec![0.0; spec.p()], &spec.covariance(), n, rng)?;
    let f = spec.outcome(&x)?;
    let y = f
        .iter()
        .map(|fi| fi + spec.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(LabeledDataset {
        x,
        y,
        f_noiseless: Some(f),
        stable_idx: (0..spec.p_s).collect(),
        unstable_idx: (spec.p_s..spec.p()).collect(),
    })
}

/// `Π |r|^(−5·|f − sign(r)·vᵢ|)`, floored at the smallest positive double.
pub fn selection_prob(f_s: f64, v_vals: &[f64], r: f64) -> Result<f64> {
    if !(r.abs() > 1.0) || !r.is_finite() {
        return Err(Error::invalid(format!(
            "bias rate must satisfy |r| > 1, got {r}"
        )));
    }
    let sign = r.signum();
    let total: f64 = v_vals.iter().map(|v| (f_s - sign * v).abs()).sum();
    Ok((-5.0 * r.abs().ln() * total).exp().max(f64::MIN_POSITIVE))
}

/// Keeps each row independently with its selection probability.
pub fn apply_selection_bias(
    ds: &LabeledDataset,
    env: &EnvironmentSpec,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    let f = ds
        .f_noiseless
        .as_ref()
        .ok_or_else(|| Error::invalid("selection needs the noiseless outcome"))?;
    if let Some(&bad) = env.v_b.iter().find(|&&k| k >= ds.unstable_idx.len()) {
        return Err(Error::invalid(format!(
            "biased variable index {bad} out of range for {} unstable variables",
            ds.unstable_idx.len()
        )));
    }
    let cols: Vec<usize> = env.v_b.iter().map(|&k| ds.unstable_idx[k]).collect();
    let mut v = vec![0.0; cols.len()];
    let mut keep = Vec::new();
    for i in 0..ds.n() {
        let row = ds.x.row(i);
        for (vk, &c) in v.iter_mut().zip(&cols) {
            *vk = row[c];
        }
        let pr = selection_prob(f[i], &v, env.r)?;
        if rng.random::<f64>() < pr {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::EmptySelection {
            attempted: ds.n(),
            r: env.r,
        });
    }
    Ok(ds.select_rows(&keep))
}

const OVERSAMPLE: usize = 10;
const MAX_ROUNDS: usize = 200;

/// Draws exactly `n` selected rows: generate `10·n` base rows per round until
/// enough survive, then keep a uniformly random subset of size `n`.
pub fn sample_environment(
    spec: &SyntheticSpec,
    env: &EnvironmentSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    let mut pool: Option<LabeledDataset> = None;
    let mut attempted = 0;
    for _ in 0..MAX_ROUNDS {
        let base = gen_base(spec, OVERSAMPLE * n, rng)?;
        attempted += base.n();
        match apply_selection_bias(&base, env, rng) {
            Ok(sel) => match pool.as_mut() {
                Some(p) => p.append(sel)?,
                None => pool = Some(sel),
            },
            Err(Error::EmptySelection { .. }) => {}
            Err(e) => return Err(e),
        }
        if pool.as_ref().is_some_and(|p| p.n() >= n) {
            break;
        }
    }
    let pool = match pool {
        Some(p) if p.n() >= n => p,
        _ => {
            return Err(Error::EmptySelection {
                attempted,
                r: env.r,
            })
        }
    };
    let mut idx = sample(rng, pool.n(), n).into_vec();
    idx.sort_unstable();
    Ok(pool.select_rows(&idx))
}

#[derive(Debug, Clone)]
pub struct EnvSuite {
    pub train: LabeledDataset,
    /// `(r_test, dataset)` in the order requested.
    pub tests: Vec<(f64, LabeledDataset)>,
}

pub fn make_env_suite(
    spec: &SyntheticSpec,
    biased: &[usize],
    n_train: usize,
    r_train: f64,
    n_test: usize,
    r_test_list: &[f64],
    rng: &mut Rng,
) -> Result<EnvSuite> {
    let train_env = EnvironmentSpec::new(r_train, biased.to_vec())?;
    let test_envs = r_test_list
        .iter()
        .map(|&r| EnvironmentSpec::new(r, biased.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let train = sample_environment(spec, &train_env, n_train, rng)?;
    let tests = test_envs
        .iter()
        .map(|env| Ok((env.r, sample_environment(spec, env, n_test, rng)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnvSuite { train, tests })
}
