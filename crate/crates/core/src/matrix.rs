//! Dense row-major matrix/vector containers and the numeric kernels the
//! rest of the pipeline builds on: row normalization, cosine similarity,
//! and temperature-scaled softmax.
//!
//! Everything is 64-bit. The scaling vectors of the entropic solvers span
//! many orders of magnitude at small regularization weights and 32-bit
//! arithmetic diverges there. Constructors and kernels validate shapes and
//! finiteness eagerly so downstream solvers can assume clean inputs.

use crate::error::{Error, Result};

/// Row norms at or below this are treated as zero (not normalizable).
pub const ZERO_ROW_EPS: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
///
/// Invariants: `data.len() == rows * cols` and every entry is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ValidationError {
                message: format!(
                    "matrix data length {} does not equal {}x{}",
                    data.len(),
                    rows,
                    cols
                ),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix construction",
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a slice of equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ValidationError {
                message: "matrix rows have unequal lengths".to_string(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix with every entry equal to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Borrow row `r` as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert!(r < self.rows);
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Mutable borrow of row `r`.
    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert!(r < self.rows);
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row-major view of the full storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Frobenius inner product `<self, other>`.
    pub fn frobenius_dot(&self, other: &Matrix) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Per-row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    /// Per-column sums.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                out[c] += v;
            }
        }
        out
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Dense vector of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Builds a vector, validating finiteness.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector construction",
            });
        }
        Ok(Self { data })
    }

    /// Vector with `len` copies of `value`.
    pub fn filled(len: usize, value: f64) -> Self {
        Self {
            data: vec![value; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// L1 norm (sum of absolute values).
    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// Sum of entries.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales every row of `m` to unit L2 norm.
///
/// Fails with [`Error::ZeroRow`] if any row norm is at or below
/// [`ZERO_ROW_EPS`]; direction is preserved for the rest.
pub fn l2_normalize_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let norm = row_norm(out.row(r));
        if norm <= ZERO_ROW_EPS {
            return Err(Error::ZeroRow { row: r, norm });
        }
        for v in out.row_mut(r) {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Pairwise cosine similarity between the rows of `a` (LxD) and `b` (NxD),
/// returned as an LxN matrix with entries clamped into `[-1, 1]`.
pub fn cosine_similarity(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let an = l2_normalize_rows(a)?;
    let bn = l2_normalize_rows(b)?;
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..an.rows() {
        let ra = an.row(i);
        for j in 0..bn.rows() {
            let dot: f64 = ra.iter().zip(bn.row(j)).map(|(x, y)| x * y).sum();
            out.set(i, j, dot.clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

/// Temperature-scaled softmax with max-subtraction stabilization:
/// `out_j = exp(v_j / tau) / sum_i exp(v_i / tau)`.
pub fn tempered_softmax(v: &Vector, tau: f64) -> Result<Vector> {
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTemperature { tau });
    }
    let scaled: Vec<f64> = v.as_slice().iter().map(|x| x / tau).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Vector::from_vec(exps.into_iter().map(|e| e / total).collect())
}
