use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Nonnegative per-sample weights with unit mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightSet {
    w: Vec<f64>,
}

pub const MEAN_TOLERANCE: f64 = 1e-8;

impl WeightSet {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidWeights("weight vector is empty".into()));
        }
        if let Some(i) = w.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidWeights(format!(
                "weight {i} is {} (must be finite and nonnegative)",
                w[i]
            )));
        }
        let m = w.iter().sum::<f64>() / w.len() as f64;
        if (m - 1.0).abs() > MEAN_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "mean weight is {m}, expected 1"
            )));
        }
        Ok(Self { w })
    }

    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }

    /// Rescales nonnegative raw values to unit mean.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        normalize_clip(&raw, 1.0)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }

    pub fn mean(&self) -> f64 {
        self.w.iter().sum::<f64>() / self.w.len() as f64
    }

    /// Population standard deviation of the weights.
    pub fn sd(&self) -> f64 {
        let m = self.mean();
        (self.w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.w.len() as f64).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn l2_distance(&self, other: &WeightSet) -> f64 {
        self.w
            .iter()
            .zip(&other.w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Single-column CSV with a `weight` header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["weight"])?;
        for v in &self.w {
            wtr.write_record([v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut w = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = rec.get(0).unwrap_or("");
            let v: f64 = field.trim().parse().map_err(|_| Error::NonNumeric {
                column: "weight".into(),
                row,
                value: field.into(),
            })?;
            w.push(v);
        }
        Self::new(w)
    }
}

impl TryFrom<Vec<f64>> for WeightSet {
    type Error = Error;
    fn try_from(w: Vec<f64>) -> Result<Self> {
        Self::new(w)
    }
}

impl From<WeightSet> for Vec<f64> {
    fn from(w: WeightSet) -> Self {
        w.w
    }
}

/// Linear-interpolation empirical quantile of an already sorted slice.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clamps values above the `clip_quantile` empirical quantile, then rescales
/// to unit mean.
pub fn normalize_clip(raw: &[f64], clip_quantile: f64) -> Result<WeightSet> {
    if !(clip_quantile > 0.5 && clip_quantile <= 1.0) {
        return Err(Error::invalid(format!(
            "clip quantile must lie in (0.5, 1], got {clip_quantile}"
        )));
    }
    if raw.is_empty() {
        return Err(Error::InvalidWeights("weight vector is empty".into()));
    }
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidWeights(
            "raw weights must be finite and nonnegative".into(),
        ));
    }
    let mut sorted = raw.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cap = sorted_quantile(&sorted, clip_quantile);
    let clipped: Vec<f64> = raw.iter().map(|v| v.min(cap)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("all raw weights are zero".into()));
    }
    let m = total / raw.len() as f64;
    Ok(WeightSet {
        w: clipped.into_iter().map(|v| v / m).collect(),
    })
}

/// `(Σw)² / Σw²`.
pub fn effective_sample_size(w: &WeightSet) -> f64 {
    let s: f64 = w.w.iter().sum();
    let s2: f64 = w.w.iter().map(|v| v * v).sum();
    s * s / s2
}

fn check_weights(x: &Matrix, w: &[f64]) -> Result<()> {
    if w.len() != x.rows() {
        return Err(Error::mismatch("weights", x.rows(), w.len()));
    }
    Ok(())
}

/// Weighted column means `(1/n) Σ wₖ xₖ`.
pub fn weighted_means(x: &Matrix, w: &[f64]) -> Vec<f64> {
    let mut m = vec![0.0; x.cols()];
    for (r, wk) in x.row_iter().zip(w) {
        for (mj, v) in m.iter_mut().zip(r) {
            *mj += wk * v;
        }
    }
    let n = x.rows() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `(1/n) Σ wₖ xₖᵢ xₖⱼ − [(1/n) Σ wₖ xₖᵢ][(1/n) Σ wₖ xₖⱼ]`.
pub fn weighted_cov(x: &Matrix, w: &[f64], i: usize, j: usize) -> Result<f64> {
    check_weights(x, w)?;
    if i >= x.cols() || j >= x.cols() {
        return Err(Error::invalid(format!(
            "column index ({i}, {j}) out of range for {} columns",
            x.cols()
        )));
    }
    let n = x.rows() as f64;
    let (mut sij, mut si, mut sj) = (0.0, 0.0, 0.0);
    for (r, wk) in x.row_iter().zip(w) {
        sij += wk * r[i] * r[j];
        si += wk * r[i];
        sj += wk * r[j];
    }
    Ok(sij / n - (si / n) * (sj / n))
}

/// Full weighted covariance matrix (same convention as [`weighted_cov`]).
pub fn weighted_cov_matrix(x: &Matrix, w: &[f64]) -> Result<Matrix> {
    check_weights(x, w)?;
    let p = x.cols();
    let m = weighted_means(x, w);
    let mut c = Matrix::zeros(p, p);
    let mut z = vec![0.0; p];
    for (r, wk) in x.row_iter().zip(w) {
        for j in 0..p {
            z[j] = r[j] - m[j];
        }
        for a in 0..p {
            let za = wk * z[a];
            let row = c.row_mut(a);
            for b in a..p {
                row[b] += za * z[b];
            }
        }
    }
    // Σ w (x−m)(x−m)ᵀ/n equals the definition above when mean(w) = 1; the
    // correction term keeps it exact for any weight scale.
    let n = x.rows() as f64;
    let wbar = w.iter().sum::<f64>() / n;
    for a in 0..p {
        for b in a..p {
            let v = c.get(a, b) / n + (1.0 - wbar) * m[a] * m[b];
            c.set(a, b, v);
            c.set(b, a, v);
        }
    }
    Ok(c)
}

/// Weighted correlation matrix.
pub fn weighted_corr_matrix(x: &Matrix, w: &[f64]) -> Result<Matrix> {
    let c = weighted_cov_matrix(x, w)?;
    let p = c.rows();
    Ok(Matrix::from_fn(p, p, |a, b| {
        c.get(a, b) / (c.get(a, a) * c.get(b, b)).sqrt()
    }))
}

/// Largest absolute off-diagonal weighted correlation.
pub fn max_abs_weighted_corr(x: &Matrix, w: &[f64]) -> Result<f64> {
    let r = weighted_corr_matrix(x, w)?;
    let p = r.rows();
    let mut m: f64 = 0.0;
    for a in 0..p {
        for b in a + 1..p {
            m = m.max(r.get(a, b).abs());
        }
    }
    Ok(m)
}

/// Linear moment constraints of the strengthened decorrelation problem,
/// evaluated on mean-centred columns: `(1/n) Σ wₖ xₖᵢ xₖⱼ` for every `i < j`
/// followed by `(1/n) Σ wₖ xₖᵢ` for every `i`. Linear in `w`.
pub fn constraint_residual(x: &Matrix, w: &[f64]) -> Result<Vec<f64>> {
    check_weights(x, w)?;
    let p = x.cols();
    let n = x.rows() as f64;
    let centre: Vec<f64> = (0..p)
        .map(|j| x.row_iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut pairs = vec![0.0; p * (p - 1) / 2];
    let mut firsts = vec![0.0; p];
    let mut z = vec![0.0; p];
    for (r, wk) in x.row_iter().zip(w) {
        for j in 0..p {
            z[j] = r[j] - centre[j];
            firsts[j] += wk * z[j];
        }
        let mut k = 0;
        for a in 0..p {
            for b in a + 1..p {
                pairs[k] += wk * z[a] * z[b];
                k += 1;
            }
        }
    }
    pairs.extend(firsts);
    pairs.iter_mut().for_each(|v| *v /= n);
    Ok(pairs)
}
