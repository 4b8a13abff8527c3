//! Config-driven experiments: data → weights → downstream fit → evaluation
//! across test environments, repeated over independently seeded runs.
//!
//! Every unit of work (repeat, weight-learner pool, fit) draws from its own
//! seed derived from `master_seed`, so results do not depend on scheduling.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{
    default_biased, default_r_test_grid, make_env_suite, validate_rate, LabeledDataset,
    SyntheticSpec,
};
use crate::dataio::{load_csv, split_environments, standardize_on_train, TabularSchema, Task};
use crate::error::{Error, Result};
use crate::eval::{beta_error, rate_key, EnvLoss, MetricsReport};
use crate::numeric::{derive_seed, derive_seed_path, permutation, seeded_rng, Matrix};
use crate::regress::{
    lasso_fit, mlp_regress_fit, ols_fit, weighted_logistic_fit, wls_fit, Classifier, LinearModel,
    LogisticConfig, MlpRegressConfig, Predictor,
};
use crate::reweight::{
    effective_sample_size, DwrConfig, LsifConfig, SrdoClassifierConfig, WeightSet,
};
use crate::sawa::{average_weights, sawa_run, Learner, SawaConfig, SawaDiagnostics};

// stream ids for seed derivation
const DATA_STREAM: u64 = 1;
const POOL_STREAM: u64 = 2;
const REFERENCE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;
const FIT_STREAM: u64 = 5;
const GENERATOR_STREAM: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SyntheticLinear,
    SyntheticNonlinear,
    Tabular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_test: usize,
    pub p_s: usize,
    pub p_v: usize,
    pub rho_s: f64,
    pub rho_v: f64,
    pub r_train: f64,
    pub r_test: Vec<f64>,
    /// Indices into the unstable block; defaults to the first `max(1, ⌊0.2p⌋)`.
    pub biased: Option<Vec<usize>>,
    pub noise_sd: f64,
    /// Stable coefficients for the linear mode; defaults to alternating signs with unit norm.
    pub beta_s: Option<Vec<f64>>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 2000,
            p_s: 5,
            p_v: 5,
            rho_s: 0.9,
            rho_v: 0.1,
            r_train: 2.1,
            r_test: default_r_test_grid(),
            biased: None,
            noise_sd: crate::datagen::DEFAULT_NOISE_SD,
            beta_s: None,
        }
    }
}

impl SyntheticSection {
    pub fn biased(&self) -> Vec<usize> {
        self.biased
            .clone()
            .unwrap_or_else(|| default_biased(self.p_s + self.p_v, self.p_v))
    }

    /// The data-generating process; the nonlinear generator network is
    /// drawn once from `master_seed` and shared by all repeats.
    pub fn spec(&self, mode: Mode, master_seed: u64) -> Result<SyntheticSpec> {
        let mut spec = match mode {
            Mode::SyntheticNonlinear => {
                let mut rng = seeded_rng(derive_seed(master_seed, GENERATOR_STREAM));
                SyntheticSpec::nonlinear(self.p_s, self.p_v, self.rho_s, self.rho_v, &mut rng)?
            }
            _ => SyntheticSpec::linear(self.p_s, self.p_v, self.rho_s, self.rho_v),
        };
        if let Some(b) = &self.beta_s {
            spec.beta_s = b.clone();
        }
        spec.noise_sd = self.noise_sd;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularSection {
    /// CSV path, relative to the config file.
    pub path: PathBuf,
    pub schema: TabularSchema,
    /// Environment values pooled into the training set.
    pub train_environments: Vec<String>,
    /// Test environments; empty means every environment not used for training.
    #[serde(default)]
    pub test_environments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SawaSection {
    pub k: usize,
    /// Compare ensembles against a high-budget decorrelation reference.
    pub reference: bool,
    pub reference_k: usize,
    pub reference_iter_factor: usize,
}

impl Default for SawaSection {
    fn default() -> Self {
        Self {
            k: 10,
            reference: false,
            reference_k: 50,
            reference_iter_factor: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub dwr: DwrConfig,
    pub srdo_classifier: SrdoClassifierConfig,
    pub srdo_lsif: LsifConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Downstream model for `ols` and the reweighting methods; defaults to
    /// `mlp` in the nonlinear synthetic mode and `linear` otherwise.
    pub predictor: Option<PredictorKind>,
    /// Penalty added to weighted least squares.
    pub wls_ridge: f64,
    /// Penalty for (weighted) logistic regression on the mean log-loss scale.
    pub logistic_ridge: f64,
    /// Candidate penalties for `ridge`, on the residual-sum-of-squares scale.
    pub ridge_grid: Vec<f64>,
    /// Candidate penalties for `lasso`, on the `(1/2n)` RSS scale.
    pub lasso_grid: Vec<f64>,
    pub lasso_max_iters: usize,
    pub lasso_tol: f64,
    /// Fraction of the training data held out to choose a penalty.
    pub validation_fraction: f64,
    pub logistic: LogisticConfig,
    pub mlp: MlpRegressConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            predictor: None,
            wls_ridge: 0.0,
            logistic_ridge: 1e-3,
            ridge_grid: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            lasso_grid: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            lasso_max_iters: 10_000,
            lasso_tol: 1e-7,
            validation_fraction: 0.2,
            logistic: LogisticConfig::default(),
            mlp: MlpRegressConfig::default(),
        }
    }
}

fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Report directory, relative to the config file.
    pub output_dir: PathBuf,
    pub methods: Vec<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub tabular: Option<TabularSection>,
    #[serde(default)]
    pub sawa: SawaSection,
    #[serde(default)]
    pub learners: LearnerSection,
    #[serde(default)]
    pub model: ModelSection,
}

/// Estimators that can appear in `methods`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Base {
    Ols,
    Ridge,
    Lasso,
    Dwr,
    SrdoClassifier,
    SrdoLsif,
}

impl Base {
    pub const ALL: [Base; 6] = [
        Base::Ols,
        Base::Ridge,
        Base::Lasso,
        Base::Dwr,
        Base::SrdoClassifier,
        Base::SrdoLsif,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Base::Ols => "ols",
            Base::Ridge => "ridge",
            Base::Lasso => "lasso",
            Base::Dwr => "dwr",
            Base::SrdoClassifier => "srdo_classifier",
            Base::SrdoLsif => "srdo_lsif",
        }
    }

    pub fn is_reweighting(self) -> bool {
        matches!(self, Base::Dwr | Base::SrdoClassifier | Base::SrdoLsif)
    }

    fn index(self) -> u64 {
        Base::ALL.iter().position(|b| *b == self).unwrap_or(0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub base: Base,
    pub sawa: bool,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.name())?;
        if self.sawa {
            f.write_str("+sawa")?;
        }
        Ok(())
    }
}

fn valid_method_names() -> String {
    let names: Vec<&str> = Base::ALL.iter().map(|b| b.name()).collect();
    format!(
        "valid names are {} (reweighting methods dwr, srdo_classifier and srdo_lsif also accept a `+sawa` suffix)",
        names.join(", ")
    )
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (head, sawa) = match s.strip_suffix("+sawa") {
            Some(h) => (h, true),
            None => (s, false),
        };
        let base = Base::ALL
            .into_iter()
            .find(|b| b.name() == head)
            .ok_or_else(|| format!("methods: unknown method `{s}`; {}", valid_method_names()))?;
        if sawa && !base.is_reweighting() {
            return Err(format!(
                "methods: `{s}` — weight averaging only applies to reweighting methods"
            ));
        }
        Ok(Method { base, sawa })
    }
}

/// A validated configuration ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub methods: Vec<Method>,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the configuration text.
    pub config_hash: String,
}

/// Reads and validates a config file, reporting every problem at once.
pub fn validate_config(path: impl AsRef<Path>) -> Result<Experiment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Experiment::from_toml(&text, base)
}

impl Experiment {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
        let hash = Sha256::digest(text.as_bytes());
        let config_hash = hash.iter().map(|b| format!("{b:02x}")).collect();
        Self::new(config, base_dir.into(), config_hash)
    }

    pub fn new(config: ExperimentConfig, base_dir: PathBuf, config_hash: String) -> Result<Self> {
        let mut problems = Vec::new();
        let mut methods = Vec::new();
        let mut seen = BTreeSet::new();
        for m in &config.methods {
            match m.parse::<Method>() {
                Ok(method) => {
                    if seen.insert(m.clone()) {
                        methods.push(method);
                    } else {
                        problems.push(format!("methods: `{m}` listed more than once"));
                    }
                }
                Err(e) => problems.push(e),
            }
        }
        if config.methods.is_empty() {
            problems.push(format!(
                "methods: at least one method is required; {}",
                valid_method_names()
            ));
        }
        if config.repeats == 0 {
            problems.push("repeats: must be at least 1".into());
        }
        if config.sawa.k == 0 {
            problems.push("sawa.k: must be at least 1".into());
        }
        if config.sawa.reference
            && (config.sawa.reference_k < 2 || config.sawa.reference_iter_factor == 0)
        {
            problems.push("sawa: reference_k must be >= 2 and reference_iter_factor >= 1".into());
        }
        let out = base_dir.join(&config.output_dir);
        if out.is_file() {
            problems.push(format!("output_dir: {} is an existing file", out.display()));
        }
        let mut push = |field: &str, r: Result<()>| {
            if let Err(e) = r {
                problems.push(format!("{field}: {e}"));
            }
        };
        push("learners.dwr", config.learners.dwr.validate());
        push(
            "learners.srdo_classifier.train",
            config.learners.srdo_classifier.train.validate(),
        );
        let c = &config.learners.srdo_classifier;
        if !(c.prob_clip > 0.0 && c.prob_clip < 0.5) {
            problems.push("learners.srdo_classifier.prob_clip: must lie in (0, 0.5)".into());
        }
        if !(c.clip_quantile > 0.5 && c.clip_quantile <= 1.0) {
            problems.push("learners.srdo_classifier.clip_quantile: must lie in (0.5, 1]".into());
        }
        let l = &config.learners.srdo_lsif;
        if l.m_centers == 0
            || !(l.ridge >= 0.0)
            || !(l.clip_quantile > 0.5 && l.clip_quantile <= 1.0)
        {
            problems.push(
                "learners.srdo_lsif: m_centers >= 1, ridge >= 0 and clip_quantile in (0.5, 1] are required"
                    .into(),
            );
        }
        let m = &config.model;
        if !(m.validation_fraction > 0.0 && m.validation_fraction < 1.0) {
            problems.push("model.validation_fraction: must lie in (0, 1)".into());
        }
        if m.ridge_grid.is_empty() || m.ridge_grid.iter().any(|v| !(*v >= 0.0)) {
            problems.push("model.ridge_grid: needs at least one nonnegative value".into());
        }
        if m.lasso_grid.is_empty() || m.lasso_grid.iter().any(|v| !(*v >= 0.0)) {
            problems.push("model.lasso_grid: needs at least one nonnegative value".into());
        }
        if !(m.wls_ridge >= 0.0) || !(m.logistic_ridge >= 0.0) {
            problems.push("model: wls_ridge and logistic_ridge must be nonnegative".into());
        }
        if let Err(e) = m.mlp.train.validate() {
            problems.push(format!("model.mlp.train: {e}"));
        }

        match config.mode {
            Mode::SyntheticLinear | Mode::SyntheticNonlinear => {
                if config.tabular.is_some() {
                    problems.push("tabular: only used in tabular mode".into());
                }
                let s = config.synthetic.clone().unwrap_or_default();
                match s.spec(config.mode, config.master_seed) {
                    Ok(spec) => {
                        if let Err(e) = spec.validate() {
                            problems.push(format!("synthetic: {e}"));
                        }
                    }
                    Err(e) => problems.push(format!("synthetic: {e}")),
                }
                if let Err(e) = validate_rate(s.r_train) {
                    problems.push(format!("synthetic.r_train: {e}"));
                }
                if s.r_test.is_empty() {
                    problems.push("synthetic.r_test: at least one test rate is required".into());
                }
                for r in &s.r_test {
                    if let Err(e) = validate_rate(*r) {
                        problems.push(format!("synthetic.r_test: {e}"));
                    }
                }
                let biased = s.biased();
                if biased.is_empty() || biased.iter().any(|&i| i >= s.p_v) {
                    problems.push(format!(
                        "synthetic.biased: indices must be non-empty and below p_v = {}",
                        s.p_v
                    ));
                }
                if s.n_train <= s.p_s + s.p_v || s.n_test == 0 {
                    problems.push(
                        "synthetic: n_train must exceed p and n_test must be positive".into(),
                    );
                }
            }
            Mode::Tabular => match &config.tabular {
                None => problems.push("tabular: section is required in tabular mode".into()),
                Some(t) => {
                    if config.synthetic.is_some() {
                        problems.push("synthetic: only used in synthetic modes".into());
                    }
                    if let Err(e) = t.schema.validate() {
                        problems.push(format!("tabular.schema: {e}"));
                    }
                    if t.schema.environment_column.is_none() {
                        problems.push(
                            "tabular.schema.environment_column: required to form environments"
                                .into(),
                        );
                    }
                    if t.train_environments.is_empty() {
                        problems.push(
                            "tabular.train_environments: at least one value is required".into(),
                        );
                    }
                    if let Some(e) = t
                        .test_environments
                        .iter()
                        .find(|e| t.train_environments.contains(e))
                    {
                        problems.push(format!(
                            "tabular.test_environments: `{e}` is also a training environment"
                        ));
                    }
                    if !base_dir.join(&t.path).is_file() {
                        problems.push(format!(
                            "tabular.path: {} does not exist",
                            base_dir.join(&t.path).display()
                        ));
                    }
                    if t.schema.task == Task::BinaryClassification {
                        if methods.iter().any(|m| m.base == Base::Lasso) {
                            problems.push(
                                "methods: lasso is not available for binary classification".into(),
                            );
                        }
                        if m.predictor == Some(PredictorKind::Mlp) {
                            problems.push(
                                "model.predictor: mlp is only available for regression".into(),
                            );
                        }
                    }
                }
            },
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(Self {
            config,
            methods,
            base_dir,
            config_hash,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.config.output_dir)
    }

    pub fn predictor(&self) -> PredictorKind {
        self.config
            .model
            .predictor
            .unwrap_or(match self.config.mode {
                Mode::SyntheticNonlinear => PredictorKind::Mlp,
                _ => PredictorKind::Linear,
            })
    }

    fn synthetic(&self) -> SyntheticSection {
        self.config.synthetic.clone().unwrap_or_default()
    }

    /// Seed of everything random in repeat `r`.
    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        derive_seed(self.config.master_seed, repeat as u64)
    }

    /// Synthetic training set and test environments of one repeat.
    pub fn synthetic_data(&self, repeat: usize) -> Result<crate::datagen::EnvSuite> {
        let s = self.synthetic();
        let spec = s.spec(self.config.mode, self.config.master_seed)?;
        let mut rng = seeded_rng(derive_seed(self.repeat_seed(repeat), DATA_STREAM));
        make_env_suite(
            &spec,
            &s.biased(),
            s.n_train,
            s.r_train,
            s.n_test,
            &s.r_test,
            &mut rng,
        )
    }

    /// Prepared design matrices of one repeat.
    pub fn repeat_data(&self, repeat: usize) -> Result<RepeatData> {
        match self.config.mode {
            Mode::Tabular => self.tabular_data(),
            mode => {
                let suite = self.synthetic_data(repeat)?;
                let truth = match mode {
                    Mode::SyntheticLinear => Some(
                        self.synthetic()
                            .spec(mode, self.config.master_seed)?
                            .true_beta(),
                    ),
                    _ => None,
                };
                Ok(RepeatData {
                    train_x: suite.train.x,
                    train_y: suite.train.y,
                    tests: suite
                        .tests
                        .into_iter()
                        .map(|(r, d)| TestEnv {
                            key: rate_key(r),
                            x: d.x,
                            y: d.y,
                        })
                        .collect(),
                    truth,
                    classification: false,
                })
            }
        }
    }

    fn tabular_data(&self) -> Result<RepeatData> {
        let t = self
            .config
            .tabular
            .as_ref()
            .ok_or_else(|| Error::invalid("tabular section missing"))?;
        let ds = load_csv(self.base_dir.join(&t.path), &t.schema)?;
        let parts = split_environments(&ds, &t.schema)?;
        for e in t.train_environments.iter().chain(&t.test_environments) {
            if !parts.contains_key(e) {
                return Err(Error::invalid(format!(
                    "environment `{e}` does not occur in the data"
                )));
            }
        }
        let mut train_idx = Vec::new();
        let env = ds
            .env
            .as_ref()
            .ok_or_else(|| Error::invalid("environment column missing"))?;
        for (i, e) in env.iter().enumerate() {
            if t.train_environments.contains(e) {
                train_idx.push(i);
            }
        }
        let train = ds.select_rows(&train_idx);
        let test_keys: Vec<String> = if t.test_environments.is_empty() {
            parts
                .keys()
                .filter(|k| !t.train_environments.contains(k))
                .cloned()
                .collect()
        } else {
            t.test_environments.clone()
        };
        if test_keys.is_empty() {
            return Err(Error::invalid("no test environments remain"));
        }
        let test_x: Vec<&Matrix> = test_keys.iter().map(|k| &parts[k].x).collect();
        let scaled = standardize_on_train(&train.x, &test_x)?;
        let tests = test_keys
            .iter()
            .zip(scaled.tests)
            .map(|(k, x)| TestEnv {
                key: k.clone(),
                x,
                y: parts[k].y.clone(),
            })
            .collect();
        Ok(RepeatData {
            train_x: scaled.train,
            train_y: train.y,
            tests,
            truth: None,
            classification: t.schema.task == Task::BinaryClassification,
        })
    }

    fn learner(&self, base: Base) -> Option<Learner> {
        let l = &self.config.learners;
        match base {
            Base::Dwr => Some(Learner::Dwr(l.dwr.clone())),
            Base::SrdoClassifier => Some(Learner::SrdoClassifier(l.srdo_classifier.clone())),
            Base::SrdoLsif => Some(Learner::SrdoLsif(l.srdo_lsif.clone())),
            _ => None,
        }
    }

    /// Learns `k` members of the pool for `base` in repeat `repeat`. Member 0
    /// is the plain single-run learner; the first `k` members form the ensemble.
    pub fn learner_pool(
        &self,
        base: Base,
        repeat: usize,
        x: &Matrix,
        k: usize,
    ) -> Result<Vec<WeightSet>> {
        let learner = self
            .learner(base)
            .ok_or_else(|| Error::invalid(format!("{} does not learn weights", base.name())))?;
        let seed = derive_seed_path(self.repeat_seed(repeat), &[POOL_STREAM, base.index()]);
        sawa_run(x, &SawaConfig::new(k, learner, seed)).map(|(_, members)| members)
    }

    fn reference_weights(&self, repeat: usize, x: &Matrix) -> Result<WeightSet> {
        let s = &self.config.sawa;
        let cfg = DwrConfig {
            max_iters: self.config.learners.dwr.max_iters * s.reference_iter_factor,
            ..self.config.learners.dwr.clone()
        };
        let seed = derive_seed(self.repeat_seed(repeat), REFERENCE_STREAM);
        sawa_run(x, &SawaConfig::new(s.reference_k, Learner::Dwr(cfg), seed)).map(|(w, _)| w)
    }

    /// Runs every (repeat, method) cell. Cell failures are collected, not fatal.
    pub fn run(&self) -> Outcome {
        let repeats: Vec<usize> = (0..self.config.repeats).collect();
        #[cfg(feature = "parallel")]
        let per_repeat: Vec<(Vec<CellResult>, Vec<Failure>)> = {
            use rayon::prelude::*;
            repeats.par_iter().map(|&r| self.run_repeat(r)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let per_repeat: Vec<(Vec<CellResult>, Vec<Failure>)> =
            repeats.iter().map(|&r| self.run_repeat(r)).collect();

        let mut cells = Vec::new();
        let mut failures = Vec::new();
        for (c, f) in per_repeat {
            cells.extend(c);
            failures.extend(f);
        }
        let env_keys = cells
            .first()
            .map(|c: &CellResult| c.env_order.clone())
            .unwrap_or_default();
        let aggregate = aggregate(&self.methods, &cells);
        Outcome {
            cells,
            failures,
            aggregate,
            env_keys,
        }
    }

    fn run_repeat(&self, repeat: usize) -> (Vec<CellResult>, Vec<Failure>) {
        let fail_all = |e: &Error| {
            self.methods
                .iter()
                .map(|m| Failure {
                    repeat,
                    method: m.to_string(),
                    error: e.to_string(),
                })
                .collect()
        };
        let data = match self.repeat_data(repeat) {
            Ok(d) => d,
            Err(e) => return (Vec::new(), fail_all(&e)),
        };

        // one pool per reweighting learner, shared by its plain and averaged variants
        let mut pools: Vec<(Base, Result<Vec<WeightSet>>)> = Vec::new();
        for m in &self.methods {
            if m.base.is_reweighting() && !pools.iter().any(|(b, _)| *b == m.base) {
                let k = if self.methods.iter().any(|o| o.base == m.base && o.sawa) {
                    self.config.sawa.k
                } else {
                    1
                };
                pools.push((m.base, self.learner_pool(m.base, repeat, &data.train_x, k)));
            }
        }
        let reference = if self.config.sawa.reference && self.methods.iter().any(|m| m.sawa) {
            Some(self.reference_weights(repeat, &data.train_x))
        } else {
            None
        };

        let mut cells = Vec::new();
        let mut failures = Vec::new();
        for m in &self.methods {
            let result = (|| -> Result<CellResult> {
                let (weights, diagnostics) = if m.base.is_reweighting() {
                    let pool = match pools.iter().find(|(b, _)| *b == m.base) {
                        Some((_, Ok(p))) => p,
                        Some((_, Err(e))) => return Err(Error::invalid(e.to_string())),
                        None => return Err(Error::invalid("missing weight pool")),
                    };
                    if m.sawa {
                        let ens = average_weights(pool)?;
                        let reference = match &reference {
                            Some(Ok(w)) => Some(w),
                            Some(Err(e)) => {
                                return Err(Error::invalid(format!("reference weights: {e}")))
                            }
                            None => None,
                        };
                        let diag = SawaDiagnostics::compute(&ens, pool, reference)?;
                        (Some(ens), Some(diag))
                    } else {
                        (Some(pool[0].clone()), None)
                    }
                } else {
                    (None, None)
                };
                let fit_seed = derive_seed_path(
                    self.repeat_seed(repeat),
                    &[FIT_STREAM, m.base.index(), m.sawa as u64],
                );
                let fitted = self.fit(m.base, &data, weights.as_ref(), repeat, fit_seed)?;
                let loss = if data.classification {
                    EnvLoss::Misclassification
                } else {
                    EnvLoss::Rmse
                };
                let mut per_env = Vec::with_capacity(data.tests.len());
                for t in &data.tests {
                    let pred = fitted.predict(&t.x)?;
                    per_env.push((t.key.clone(), loss.compute(&pred, &t.y)?));
                }
                let beta = fitted.coefficients();
                let be = match (&data.truth, &beta) {
                    (Some(truth), Some(b)) => Some(beta_error(
                        &LinearModel {
                            beta: b.clone(),
                            intercept: 0.0,
                            meta: Default::default(),
                        },
                        truth,
                    )?),
                    _ => None,
                };
                let report = MetricsReport::from_losses(per_env.iter().cloned().collect(), be)?;
                Ok(CellResult {
                    repeat,
                    method: m.to_string(),
                    env_order: per_env.iter().map(|(k, _)| k.clone()).collect(),
                    per_env,
                    report,
                    beta,
                    ess: weights.as_ref().map(effective_sample_size),
                    diagnostics,
                })
            })();
            match result {
                Ok(c) => cells.push(c),
                Err(e) => failures.push(Failure {
                    repeat,
                    method: m.to_string(),
                    error: e.to_string(),
                }),
            }
        }
        (cells, failures)
    }

    fn fit(
        &self,
        base: Base,
        data: &RepeatData,
        weights: Option<&WeightSet>,
        repeat: usize,
        fit_seed: u64,
    ) -> Result<Fitted> {
        let (x, y) = (&data.train_x, data.train_y.as_slice());
        let model = &self.config.model;
        let n = x.rows();
        let uniform;
        let w: &[f64] = match weights {
            Some(w) => w.as_slice(),
            None => {
                uniform = vec![1.0; n];
                &uniform
            }
        };
        if data.classification {
            let logistic = |x: &Matrix, y: &[f64], w: &[f64], ridge: f64| {
                weighted_logistic_fit(x, y, w, ridge, &model.logistic)
                    .map(|m| Fitted::Logistic(Classifier(m)))
            };
            return match base {
                // penalties on the RSS scale become per-sample penalties on the mean log-loss
                Base::Ridge => {
                    let grid: Vec<f64> = model.ridge_grid.iter().map(|l| l / n as f64).collect();
                    let best = self.select_penalty(
                        data,
                        repeat,
                        &grid,
                        EnvLoss::Misclassification,
                        |x, y, l| logistic(x, y, &vec![1.0; x.rows()], l),
                    )?;
                    logistic(x, y, w, best)
                }
                Base::Lasso => Err(Error::invalid("lasso is not available for classification")),
                _ => logistic(x, y, w, model.logistic_ridge),
            };
        }
        match base {
            Base::Ridge => {
                let best = self.select_penalty(
                    data,
                    repeat,
                    &model.ridge_grid,
                    EnvLoss::Rmse,
                    |x, y, l| wls_fit(x, y, &vec![1.0; x.rows()], l).map(Fitted::Linear),
                )?;
                wls_fit(x, y, w, best).map(Fitted::Linear)
            }
            Base::Lasso => {
                let fit = |x: &Matrix, y: &[f64], l: f64| {
                    lasso_fit(x, y, l, model.lasso_max_iters, model.lasso_tol)
                        .map(|f| Fitted::Linear(f.model))
                };
                let best =
                    self.select_penalty(data, repeat, &model.lasso_grid, EnvLoss::Rmse, fit)?;
                fit(x, y, best)
            }
            _ => match self.predictor() {
                PredictorKind::Linear => {
                    if weights.is_none() && model.wls_ridge == 0.0 {
                        ols_fit(x, y).map(Fitted::Linear)
                    } else {
                        wls_fit(x, y, w, model.wls_ridge).map(Fitted::Linear)
                    }
                }
                PredictorKind::Mlp => {
                    let mut rng = seeded_rng(fit_seed);
                    mlp_regress_fit(x, y, weights.map(WeightSet::as_slice), &model.mlp, &mut rng)
                        .map(Fitted::Mlp)
                }
            },
        }
    }

    /// Picks the grid value with the lowest hold-out loss (first on ties).
    fn select_penalty(
        &self,
        data: &RepeatData,
        repeat: usize,
        grid: &[f64],
        loss: EnvLoss,
        fit: impl Fn(&Matrix, &[f64], f64) -> Result<Fitted>,
    ) -> Result<f64> {
        if grid.len() == 1 {
            return Ok(grid[0]);
        }
        let n = data.train_x.rows();
        let n_val =
            ((n as f64 * self.config.model.validation_fraction).round() as usize).clamp(1, n - 1);
        let mut rng = seeded_rng(derive_seed(self.repeat_seed(repeat), SPLIT_STREAM));
        let perm = permutation(n, &mut rng);
        let (val, fit_idx) = perm.split_at(n_val);
        let xf = data.train_x.select_rows(fit_idx);
        let yf: Vec<f64> = fit_idx.iter().map(|&i| data.train_y[i]).collect();
        let xv = data.train_x.select_rows(val);
        let yv: Vec<f64> = val.iter().map(|&i| data.train_y[i]).collect();
        let mut best: Option<(f64, f64)> = None;
        for &l in grid {
            let model = fit(&xf, &yf, l)?;
            let score = loss.compute(&model.predict(&xv)?, &yv)?;
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, l));
            }
        }
        Ok(best.map(|(_, l)| l).unwrap_or(grid[0]))
    }

    /// Weights that the `weights` command exports: the first reweighting
    /// method of the config, learned on the training data of repeat 0.
    pub fn export_weights(&self) -> Result<(Method, WeightSet)> {
        let m = *self
            .methods
            .iter()
            .find(|m| m.base.is_reweighting())
            .ok_or_else(|| {
                Error::Config(vec![
                    "methods: no reweighting method to export weights for".into()
                ])
            })?;
        let data = self.repeat_data(0)?;
        let k = if m.sawa { self.config.sawa.k } else { 1 };
        let pool = self.learner_pool(m.base, 0, &data.train_x, k)?;
        Ok((m, average_weights(&pool)?))
    }

    /// Training set of repeat 0 for the synthetic modes.
    pub fn generate_training_data(&self) -> Result<LabeledDataset> {
        if self.config.mode == Mode::Tabular {
            return Err(Error::Config(vec![
                "mode: data generation needs a synthetic mode".into(),
            ]));
        }
        Ok(self.synthetic_data(0)?.train)
    }

    /// Runs the experiment and writes all report files.
    pub fn execute(&self) -> Result<Outcome> {
        let outcome = self.run();
        self.write_reports(&outcome)?;
        Ok(outcome)
    }

    pub fn write_reports(&self, outcome: &Outcome) -> Result<()> {
        let dir = self.output_dir();
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("runs.csv"), outcome.runs_csv()?)?;
        fs::write(dir.join("aggregate.csv"), outcome.aggregate_csv()?)?;
        let diagnostics: Vec<DiagnosticsRecord> = outcome
            .cells
            .iter()
            .filter_map(|c| {
                c.diagnostics.as_ref().map(|d| DiagnosticsRecord {
                    repeat: c.repeat,
                    method: c.method.clone(),
                    diagnostics: d.clone(),
                })
            })
            .collect();
        write_json(&dir.join("diagnostics.json"), &diagnostics)?;
        let manifest = Manifest {
            crate_name: env!("CARGO_PKG_NAME").into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: self.config_hash.clone(),
            mode: self.config.mode,
            master_seed: self.config.master_seed,
            repeats: self.config.repeats,
            methods: self.methods.iter().map(Method::to_string).collect(),
            repeat_seeds: (0..self.config.repeats)
                .map(|r| self.repeat_seed(r))
                .collect(),
            failures: outcome.failures.clone(),
            files: vec![
                "runs.csv".into(),
                "aggregate.csv".into(),
                "diagnostics.json".into(),
                "manifest.json".into(),
            ],
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub struct TestEnv {
    pub key: String,
    pub x: Matrix,
    pub y: Vec<f64>,
}

/// Training design and test environments for one repeat.
pub struct RepeatData {
    pub train_x: Matrix,
    pub train_y: Vec<f64>,
    pub tests: Vec<TestEnv>,
    /// True coefficients when known (linear synthetic mode).
    pub truth: Option<Vec<f64>>,
    pub classification: bool,
}

enum Fitted {
    Linear(LinearModel),
    Logistic(Classifier),
    Mlp(crate::nn::MlpModel),
}

impl Fitted {
    fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Fitted::Linear(m) => m.predict(x),
            Fitted::Logistic(m) => m.predict(x),
            Fitted::Mlp(m) => m.predict(x),
        }
    }

    fn coefficients(&self) -> Option<Vec<f64>> {
        match self {
            Fitted::Linear(m) => Some(m.beta.clone()),
            Fitted::Logistic(m) => Some(m.0.beta.clone()),
            Fitted::Mlp(_) => None,
        }
    }
}

/// Result of one (repeat, method) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub repeat: usize,
    pub method: String,
    /// Loss per test environment in configured order.
    pub per_env: Vec<(String, f64)>,
    pub env_order: Vec<String>,
    pub report: MetricsReport,
    /// Fitted coefficients for linear models.
    pub beta: Option<Vec<f64>>,
    pub ess: Option<f64>,
    pub diagnostics: Option<SawaDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub repeat: usize,
    pub method: String,
    pub error: String,
}

/// Per-method means over the successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub mean_error: f64,
    pub std_error: f64,
    pub max_error: f64,
    pub beta_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Sorted by repeat, then by method in config order.
    pub cells: Vec<CellResult>,
    pub failures: Vec<Failure>,
    pub aggregate: Vec<AggregateRow>,
    pub env_keys: Vec<String>,
}

#[derive(Serialize)]
struct DiagnosticsRecord {
    repeat: usize,
    method: String,
    diagnostics: SawaDiagnostics,
}

#[derive(Serialize)]
struct Manifest {
    crate_name: String,
    crate_version: String,
    config_sha256: String,
    mode: Mode,
    master_seed: u64,
    repeats: usize,
    methods: Vec<String>,
    repeat_seeds: Vec<u64>,
    failures: Vec<Failure>,
    files: Vec<String>,
}

fn aggregate(methods: &[Method], cells: &[CellResult]) -> Vec<AggregateRow> {
    methods
        .iter()
        .filter_map(|m| {
            let name = m.to_string();
            let rows: Vec<&CellResult> = cells.iter().filter(|c| c.method == name).collect();
            if rows.is_empty() {
                return None;
            }
            let k = rows.len() as f64;
            let avg = |f: &dyn Fn(&CellResult) -> f64| rows.iter().map(|c| f(c)).sum::<f64>() / k;
            let beta_error = if rows.iter().all(|c| c.report.beta_error.is_some()) {
                Some(avg(&|c| c.report.beta_error.unwrap_or(0.0)))
            } else {
                None
            };
            Some(AggregateRow {
                method: name,
                mean_error: avg(&|c| c.report.mean_error),
                std_error: avg(&|c| c.report.std_error),
                max_error: avg(&|c| c.report.max_error),
                beta_error,
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Outcome {
    pub fn aggregate_for(&self, method: &str) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.method == method)
    }

    pub fn cells_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.method == method)
    }

    pub fn runs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "repeat",
            "method",
            "env_r",
            "loss",
            "beta_error",
            "ess",
            "bias_sq",
            "variance",
            "covariance",
        ])?;
        for c in &self.cells {
            let d = c.diagnostics.as_ref();
            for (env, loss) in &c.per_env {
                w.write_record([
                    c.repeat.to_string(),
                    c.method.clone(),
                    env.clone(),
                    loss.to_string(),
                    opt(c.report.beta_error),
                    opt(c.ess),
                    opt(d.and_then(|d| d.decomposition.map(|x| x.bias_sq))),
                    opt(d.and_then(|d| d.variance)),
                    opt(d.and_then(|d| d.diversity)),
                ])?;
            }
        }
        finish(w)
    }

    pub fn aggregate_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "mean_error",
            "std_error",
            "max_error",
            "beta_error",
        ])?;
        for a in &self.aggregate {
            w.write_record([
                a.method.clone(),
                a.mean_error.to_string(),
                a.std_error.to_string(),
                a.max_error.to_string(),
                opt(a.beta_error),
            ])?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}
