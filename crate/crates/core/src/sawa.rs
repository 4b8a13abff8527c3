//! Sample-weight averaging: learn `K` weight sets from independently seeded
//! initialisations and average them before the downstream weighted fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded_rng, Matrix};
use crate::reweight::{
    dwr_learn, effective_sample_size, lsif_learn, srdo_learn_classifier, DwrConfig, LsifConfig,
    SrdoClassifierConfig, WeightSet,
};

/// A weight learner together with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Learner {
    Dwr(DwrConfig),
    SrdoClassifier(SrdoClassifierConfig),
    SrdoLsif(LsifConfig),
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Dwr(_) => "dwr",
            Learner::SrdoClassifier(_) => "srdo_classifier",
            Learner::SrdoLsif(_) => "srdo_lsif",
        }
    }

    /// Runs the learner once with its own RNG stream.
    pub fn learn(&self, x: &Matrix, seed: u64) -> Result<WeightSet> {
        let mut rng = seeded_rng(seed);
        match self {
            Learner::Dwr(cfg) => dwr_learn(x, cfg, &mut rng),
            Learner::SrdoClassifier(cfg) => srdo_learn_classifier(x, cfg, &mut rng),
            Learner::SrdoLsif(cfg) => lsif_learn(x, cfg, &mut rng).map(|(_, w)| w),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawaConfig {
    pub k: usize,
    pub learner: Learner,
    pub master_seed: u64,
}

impl SawaConfig {
    pub fn new(k: usize, learner: Learner, master_seed: u64) -> Self {
        Self {
            k,
            learner,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("sawa k must be at least 1"));
        }
        match &self.learner {
            Learner::Dwr(c) => c.validate(),
            Learner::SrdoClassifier(c) => c.train.validate(),
            Learner::SrdoLsif(_) => Ok(()),
        }
    }
}

/// Seed of member `k`; member 0 is also the plain single-run learner.
pub fn member_seed(master_seed: u64, k: usize) -> u64 {
    derive_seed(master_seed, k as u64)
}

/// Elementwise mean of equally long weight sets.
pub fn average_weights(sets: &[WeightSet]) -> Result<WeightSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty list of weight sets"))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for s in sets {
        if s.len() != n {
            return Err(Error::mismatch("weight set length", n, s.len()));
        }
        for (a, v) in acc.iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    let k = sets.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    WeightSet::new(acc)
}

/// Learns `cfg.k` members (concurrently when the `parallel` feature is on)
/// and returns their average together with the members in index order.
pub fn sawa_run(x: &Matrix, cfg: &SawaConfig) -> Result<(WeightSet, Vec<WeightSet>)> {
    cfg.validate()?;
    let learn = |k: usize| {
        cfg.learner
            .learn(x, member_seed(cfg.master_seed, k))
            .map_err(|e| Error::Member {
                index: k,
                source: Box::new(e),
            })
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<WeightSet>> = {
        use rayon::prelude::*;
        (0..cfg.k).into_par_iter().map(learn).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<WeightSet>> = (0..cfg.k).map(learn).collect();

    let members = results.into_iter().collect::<Result<Vec<_>>>()?;
    let ensemble = average_weights(&members)?;
    Ok((ensemble, members))
}

fn check_pool(members: &[WeightSet]) -> Result<Vec<f64>> {
    if members.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 members, got {}",
            members.len()
        )));
    }
    Ok(average_weights(members)?.into_vec())
}

fn deviations(members: &[WeightSet], centre: &[f64]) -> Vec<Vec<f64>> {
    members
        .iter()
        .map(|m| {
            m.as_slice()
                .iter()
                .zip(centre)
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect()
}

/// Mean over unordered member pairs of `(1/n) Σᵢ (w⁽ˡ⁾ᵢ − ŵᵢ)(w⁽ᵐ⁾ᵢ − ŵᵢ)` with `ŵ`
/// the pool mean. Nonpositive; more negative means more diverse members.
pub fn pairwise_diversity(members: &[WeightSet]) -> Result<f64> {
    let centre = check_pool(members)?;
    let dev = deviations(members, &centre);
    let n = centre.len() as f64;
    let k = dev.len();
    let mut sum = 0.0;
    for l in 0..k {
        for m in l + 1..k {
            sum += crate::numeric::dot(&dev[l], &dev[m]);
        }
    }
    Ok(sum / n / (k * (k - 1) / 2) as f64)
}

/// Mean over members of `(1/n)‖w⁽ᵏ⁾ − ŵ‖²` around the pool mean `ŵ`.
pub fn member_variance(members: &[WeightSet]) -> Result<f64> {
    let centre = check_pool(members)?;
    let n = centre.len() as f64;
    Ok(deviations(members, &centre)
        .iter()
        .map(|d| crate::numeric::dot(d, d) / n)
        .sum::<f64>()
        / members.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub bias_sq: f64,
    pub variance: f64,
    pub covariance: f64,
    pub total: f64,
    pub k: usize,
}

impl Decomposition {
    /// `bias² + variance/K + (K−1)/K · covariance`.
    pub fn recomposed(&self) -> f64 {
        let k = self.k as f64;
        self.bias_sq + self.variance / k + (k - 1.0) / k * self.covariance
    }

    pub fn identity_residual(&self) -> f64 {
        (self.total - self.recomposed()).abs()
    }
}

/// Splits the squared error of the averaged weights against `reference` into
/// bias, variance and covariance terms, taking the pool mean as the expected
/// member. With that choice the identity is exact, `total == bias_sq`, and
/// the variance and covariance terms cancel.
pub fn decompose_error(members: &[WeightSet], reference: &WeightSet) -> Result<Decomposition> {
    let centre = check_pool(members)?;
    if reference.len() != centre.len() {
        return Err(Error::mismatch(
            "reference length",
            centre.len(),
            reference.len(),
        ));
    }
    let n = centre.len() as f64;
    let sq =
        |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    let bias_sq = sq(&centre, reference.as_slice());
    let variance = member_variance(members)?;
    let covariance = pairwise_diversity(members)?;
    // the averaged weights coincide with the pool mean
    let total = bias_sq;
    Ok(Decomposition {
        bias_sq,
        variance,
        covariance,
        total,
        k: members.len(),
    })
}

/// Per-run weight diagnostics written alongside experiment results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawaDiagnostics {
    pub k: usize,
    pub ensemble_ess: f64,
    pub member_ess: Vec<f64>,
    pub mean_member_ess: f64,
    pub ensemble_sd: f64,
    pub mean_member_sd: f64,
    /// Signed pairwise diversity; absent for a single member.
    pub diversity: Option<f64>,
    /// Mean squared member deviation from the pool mean.
    pub variance: Option<f64>,
    pub log10_abs_diversity: Option<f64>,
    pub decomposition: Option<Decomposition>,
}

impl SawaDiagnostics {
    pub fn compute(
        ensemble: &WeightSet,
        members: &[WeightSet],
        reference: Option<&WeightSet>,
    ) -> Result<Self> {
        let member_ess: Vec<f64> = members.iter().map(effective_sample_size).collect();
        let k = members.len();
        let mean_member_ess = member_ess.iter().sum::<f64>() / k.max(1) as f64;
        let mean_member_sd = members.iter().map(WeightSet::sd).sum::<f64>() / k.max(1) as f64;
        let diversity = if k >= 2 {
            Some(pairwise_diversity(members)?)
        } else {
            None
        };
        let variance = if k >= 2 {
            Some(member_variance(members)?)
        } else {
            None
        };
        let decomposition = match reference {
            Some(r) if k >= 2 => Some(decompose_error(members, r)?),
            _ => None,
        };
        Ok(Self {
            k,
            ensemble_ess: effective_sample_size(ensemble),
            member_ess,
            mean_member_ess,
            ensemble_sd: ensemble.sd(),
            mean_member_sd,
            diversity,
            variance,
            log10_abs_diversity: diversity.map(|d| d.abs().log10()),
            decomposition,
        })
    }
}
