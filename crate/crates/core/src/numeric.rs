//! Dense numeric primitives shared by every other module: a row-major
//! matrix, seeded random streams, Cholesky-based sampling and solves, and
//! column standardization.

use nalgebra::DMatrix;
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream used throughout the crate (PCG XSL RR 128/64).
pub type Rng = rand_pcg::Pcg64;

/// Builds the crate's random stream from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a parent seed and a stream id.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Folds a sequence of stream ids into a parent seed.
pub fn derive_seed_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |seed, &id| derive_seed(seed, id))
}

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix must have at least one row and column, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::mismatch(
                "matrix data length",
                rows * cols,
                data.len(),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite matrix entry at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::mismatch("row length", cols, bad.len()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.row_iter().map(|r| r[j]).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, idx.len(), |i, j| self.get(i, idx[j]))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::mismatch("vstack columns", self.cols, other.cols));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::mismatch("matrix-vector product", self.cols, v.len()));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
        Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation of two equal-length samples.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_square(a: &Matrix, what: &str) -> Result<()> {
    if a.rows != a.cols {
        return Err(Error::mismatch(format!("{what} (square)"), a.rows, a.cols));
    }
    Ok(())
}

/// Lower Cholesky factor `L` with `L Lᵀ = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    check_square(a, "cholesky")?;
    let scale = max_abs(&a.data).max(1.0);
    for i in 0..a.rows {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > 1e-12 * scale {
                return Err(Error::NotPositiveDefinite {
                    context: format!("entry ({i}, {j}) is not symmetric"),
                });
            }
        }
    }
    let chol = a
        .to_nalgebra()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            context: "Cholesky decomposition failed".into(),
        })?;
    let l = chol.unpack();
    let max_diag = (0..a.rows).map(|i| a.get(i, i)).fold(0.0, f64::max);
    for i in 0..a.rows {
        if l[(i, i)] * l[(i, i)] <= 1e-14 * max_diag {
            return Err(Error::NotPositiveDefinite {
                context: format!("pivot {i} is numerically zero"),
            });
        }
    }
    Ok(Matrix::from_nalgebra(&l))
}

/// Draws `n` rows from `N(mean, cov)` through the Cholesky factor of `cov`.
pub fn mvn_sample(mean: &[f64], cov: &Matrix, n: usize, rng: &mut Rng) -> Result<Matrix> {
    if cov.rows != mean.len() {
        return Err(Error::mismatch(
            "covariance dimension",
            mean.len(),
            cov.rows,
        ));
    }
    let l = cholesky(cov)?;
    let p = mean.len();
    let mut z = vec![0.0; p];
    let mut out = Matrix::zeros(n, p);
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        let row = out.row_mut(i);
        for a in 0..p {
            let lrow = l.row(a);
            row[a] = mean[a] + dot(&lrow[..=a], &z[..=a]);
        }
    }
    Ok(out)
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    check_square(a, "solve_spd")?;
    if b.len() != a.rows {
        return Err(Error::mismatch(
            "solve_spd right-hand side",
            a.rows,
            b.len(),
        ));
    }
    let l = cholesky(a).map_err(|e| Error::Singular {
        context: e.to_string(),
        advice: "system matrix must be symmetric positive definite".into(),
    })?;
    let n = a.rows;
    // forward then backward substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s = b[i] - dot(&l.row(i)[..i], &y[..i]);
        y[i] = s / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.get(k, i) * x[k];
        }
        x[i] = s / l.get(i, i);
    }
    Ok(x)
}

/// Per-column location and scale (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let names: Vec<String> = (0..x.cols).map(|j| format!("column {j}")).collect();
        Self::fit_named(x, &names)
    }

    pub fn fit_named(x: &Matrix, names: &[String]) -> Result<Self> {
        let n = x.rows as f64;
        let mut means = vec![0.0; x.cols];
        for r in x.row_iter() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; x.cols];
        for r in x.row_iter() {
            for j in 0..x.cols {
                let d = r[j] - means[j];
                vars[j] += d * d;
            }
        }
        let mut sds = Vec::with_capacity(x.cols);
        for (j, v) in vars.into_iter().enumerate() {
            let sd = (v / n).sqrt();
            if !(sd > 1e-12 * means[j].abs().max(1.0)) {
                return Err(Error::ZeroVariance {
                    column: names
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| format!("column {j}")),
                });
            }
            sds.push(sd);
        }
        Ok(Self { means, sds })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.means.len() {
            return Err(Error::mismatch(
                "standardizer columns",
                self.means.len(),
                x.cols,
            ));
        }
        Ok(Matrix::from_fn(x.rows, x.cols, |i, j| {
            (x.get(i, j) - self.means[j]) / self.sds[j]
        }))
    }

    pub fn inverse_transform(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols != self.means.len() {
            return Err(Error::mismatch(
                "standardizer columns",
                self.means.len(),
                z.cols,
            ));
        }
        Ok(Matrix::from_fn(z.rows, z.cols, |i, j| {
            z.get(i, j) * self.sds[j] + self.means[j]
        }))
    }
}

/// Standardizes every column to mean 0 and unit (population) standard deviation.
pub fn standardize_columns(x: &Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    let s = Standardizer::fit(x)?;
    let z = s.transform(x)?;
    Ok((z, s.means, s.sds))
}

/// Uniform random permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
