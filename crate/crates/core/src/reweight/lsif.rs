//! Closed-form least-squares importance fitting in a Gaussian-kernel linear
//! family `w_θ(x) = a(x)ᵀθ`, where the last feature is the constant 1.

use std::fmt;

use rand::seq::index::sample;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use super::srdo::srdo_resample;
use super::weights::{normalize_clip, WeightSet};
use crate::error::{Error, Result};
use crate::numeric::{dot, solve_spd, Matrix, Rng};

/// Kernel width: a fixed value or the median pairwise distance heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct BwVisitor;
        impl Visitor<'_> for BwVisitor {
            type Value = Bandwidth;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("\"auto\" or a positive number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bandwidth, E> {
                if v == "auto" {
                    Ok(Bandwidth::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Bandwidth, E> {
                if v > 0.0 {
                    Ok(Bandwidth::Fixed(v))
                } else {
                    Err(E::invalid_value(de::Unexpected::Float(v), &self))
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bandwidth, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bandwidth, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(BwVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsifConfig {
    pub m_centers: usize,
    pub bandwidth: Bandwidth,
    pub ridge: f64,
    pub clip_quantile: f64,
}

impl Default for LsifConfig {
    fn default() -> Self {
        Self {
            m_centers: 100,
            bandwidth: Bandwidth::Auto,
            ridge: 1e-3,
            clip_quantile: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsifModel {
    pub centers: Matrix,
    pub bandwidth: f64,
    /// One coefficient per center followed by the constant-feature coefficient.
    pub theta: Vec<f64>,
    pub ridge: f64,
}

fn kernel_features(centers: &Matrix, bandwidth: f64, row: &[f64], out: &mut [f64]) {
    let denom = 2.0 * bandwidth * bandwidth;
    for (o, c) in out.iter_mut().zip(centers.row_iter()) {
        let d2: f64 = c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
        *o = (-d2 / denom).exp();
    }
    out[centers.rows()] = 1.0;
}

impl LsifModel {
    pub fn dim(&self) -> usize {
        self.centers.rows() + 1
    }

    /// Feature matrix `a(x)` with the constant column last.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        design(&self.centers, self.bandwidth, x)
    }

    /// Unclamped ratio estimate `a(x)ᵀθ`.
    pub fn ratio(&self, x: &Matrix) -> Result<Vec<f64>> {
        let a = self.features(x)?;
        Ok(a.row_iter().map(|r| dot(r, &self.theta)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn design(centers: &Matrix, bandwidth: f64, x: &Matrix) -> Result<Matrix> {
    if x.cols() != centers.cols() {
        return Err(Error::mismatch("kernel input", centers.cols(), x.cols()));
    }
    let d = centers.rows() + 1;
    let mut out = Matrix::zeros(x.rows(), d);
    for i in 0..x.rows() {
        kernel_features(centers, bandwidth, x.row(i), out.row_mut(i));
    }
    Ok(out)
}

/// The quadratic `½ θᵀHθ − hᵀθ + (ridge/2)‖θ‖²` with
/// `H = (1/n) Σ a(xᵢ)a(xᵢ)ᵀ` over training rows and `h = (1/n) Σ a(x̃ⱼ)` over
/// resampled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LsifProblem {
    pub h_matrix: Matrix,
    pub h_vector: Vec<f64>,
    pub ridge: f64,
}

impl LsifProblem {
    pub fn build(
        x: &Matrix,
        resampled: &Matrix,
        centers: &Matrix,
        bandwidth: f64,
        ridge: f64,
    ) -> Result<Self> {
        let a = design(centers, bandwidth, x)?;
        let at = design(centers, bandwidth, resampled)?;
        let d = a.cols();
        let mut h = Matrix::zeros(d, d);
        for r in a.row_iter() {
            for i in 0..d {
                let ri = r[i];
                let row = h.row_mut(i);
                for j in i..d {
                    row[j] += ri * r[j];
                }
            }
        }
        let n = x.rows() as f64;
        for i in 0..d {
            for j in i..d {
                let v = h.get(i, j) / n;
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        let mut hv = vec![0.0; d];
        for r in at.row_iter() {
            for (acc, v) in hv.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let nt = resampled.rows() as f64;
        hv.iter_mut().for_each(|v| *v /= nt);
        Ok(Self {
            h_matrix: h,
            h_vector: hv,
            ridge,
        })
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let ht = self
            .h_matrix
            .matvec(theta)
            .expect("theta has problem dimension");
        0.5 * dot(theta, &ht) - dot(&self.h_vector, theta) + 0.5 * self.ridge * dot(theta, theta)
    }

    /// `H + ridge·I`.
    pub fn system_matrix(&self) -> Matrix {
        let mut a = self.h_matrix.clone();
        for i in 0..a.rows() {
            let v = a.get(i, i) + self.ridge;
            a.set(i, i, v);
        }
        a
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        solve_spd(&self.system_matrix(), &self.h_vector).map_err(|e| match e {
            Error::Singular { context, .. } => Error::Singular {
                context: format!("LSIF normal equations: {context}"),
                advice: "use ridge > 0".into(),
            },
            other => other,
        })
    }
}

/// Median pairwise Euclidean distance over at most 500 randomly chosen rows.
pub fn median_distance(x: &Matrix, rng: &mut Rng) -> f64 {
    let n = x.rows();
    let rows: Vec<usize> = if n > 500 {
        sample(rng, n, 500).into_vec()
    } else {
        (0..n).collect()
    };
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let s: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// Fits the closed-form LSIF ratio and returns it with the normalised weights.
pub fn lsif_learn(x: &Matrix, cfg: &LsifConfig, rng: &mut Rng) -> Result<(LsifModel, WeightSet)> {
    let n = x.rows();
    if cfg.m_centers == 0 || cfg.m_centers > n {
        return Err(Error::invalid(format!(
            "m_centers must lie in 1..={n}, got {}",
            cfg.m_centers
        )));
    }
    if !(cfg.ridge >= 0.0) {
        return Err(Error::invalid("ridge must be nonnegative"));
    }
    let center_rows = sample(rng, n, cfg.m_centers).into_vec();
    let centers = x.select_rows(&center_rows);
    let bandwidth = match cfg.bandwidth {
        Bandwidth::Auto => median_distance(x, rng),
        Bandwidth::Fixed(b) if b > 0.0 => b,
        Bandwidth::Fixed(b) => {
            return Err(Error::invalid(format!("bandwidth must be > 0, got {b}")))
        }
    };
    let resampled = srdo_resample(x, rng);
    let problem = LsifProblem::build(x, &resampled, &centers, bandwidth, cfg.ridge)?;
    let theta = problem.solve()?;
    let model = LsifModel {
        centers,
        bandwidth,
        theta,
        ridge: cfg.ridge,
    };
    let raw: Vec<f64> = model.ratio(x)?.into_iter().map(|v| v.max(0.0)).collect();
    let weights = normalize_clip(&raw, cfg.clip_quantile)?;
    Ok((model, weights))
}
