//! Dense attention primitives over row-major `f64` matrices.
//!
//! The three operations mirror a single attention head:
//!
//! ```text
//! S = q k^T / sqrt(d)
//! A = softmax(S + M)        (row-wise, M additive, -inf = masked)
//! h = A v
//! ```
//!
//! Everything is 64-bit so that tests can compare against naive oracles at
//! tight tolerances.

use std::fmt;

use crate::error::{AaiError, Result};

/// Row-major dense matrix.
///
/// Score and weight matrices are finite; mask matrices may additionally hold
/// `f64::NEG_INFINITY`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(AaiError::Shape(format!(
                "{} values do not fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(AaiError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let cols = self.cols;
        &mut self.data[i * cols..(i + 1) * cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Elementwise sum. `-inf + finite = -inf`.
    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.ensure_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Columns `start..start + width` as a new matrix.
    pub fn column_block(&self, start: usize, width: usize) -> Result<Matrix> {
        if start + width > self.cols {
            return Err(AaiError::Shape(format!(
                "column block {start}..{} outside {} columns",
                start + width,
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..start + width]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    /// Plain matrix product.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(AaiError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let lhs = self.row(i);
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in lhs.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn ensure_same_shape(&self, other: &Matrix, op: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(AaiError::Shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Head dimension and sequence length of one attention call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub head_dim: usize,
    pub seq_len: usize,
}

impl AttentionConfig {
    pub fn new(head_dim: usize, seq_len: usize) -> Result<Self> {
        if head_dim == 0 || seq_len == 0 {
            return Err(AaiError::Config(format!(
                "head_dim ({head_dim}) and seq_len ({seq_len}) must be positive"
            )));
        }
        Ok(Self { head_dim, seq_len })
    }
}

/// `S[i][j] = <q_i, k_j> / sqrt(head_dim)`.
///
/// `head_dim` only sets the scale; callers normally pass `q.cols()`.
pub fn scaled_dot_product(q: &Matrix, k: &Matrix, head_dim: usize) -> Result<Matrix> {
    if head_dim == 0 {
        return Err(AaiError::Shape("head_dim must be positive".into()));
    }
    if q.cols != k.cols {
        return Err(AaiError::Shape(format!(
            "q is {}x{}, k is {}x{}, head_dim {head_dim}",
            q.rows, q.cols, k.rows, k.cols
        )));
    }
    let scale = (head_dim as f64).sqrt();
    let mut out = Matrix::zeros(q.rows, k.rows);
    for i in 0..q.rows {
        let qi = q.row(i);
        for j in 0..k.rows {
            let dot: f64 = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            out.data[i * k.rows + j] = dot / scale;
        }
    }
    Ok(out)
}

/// Row-wise `softmax(S + M)`.
///
/// Entries where `M` is `-inf` come out as exactly `0.0`. A row with no finite
/// entry is an error.
pub fn masked_softmax(scores: &Matrix, mask: &Matrix) -> Result<Matrix> {
    scores.ensure_same_shape(mask, "masked_softmax")?;
    if !scores.is_finite() {
        return Err(AaiError::DegenerateInput(
            "score matrix contains non-finite values".into(),
        ));
    }
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    let mut logits = vec![0.0; scores.cols];
    for i in 0..scores.rows {
        for ((z, &s), &m) in logits.iter_mut().zip(scores.row(i)).zip(mask.row(i)) {
            *z = s + m;
        }
        softmax_row(&logits, out.row_mut(i)).map_err(|_| AaiError::DegenerateRow { row: i })?;
    }
    Ok(out)
}

/// Row-wise softmax with no mask.
pub fn softmax(scores: &Matrix) -> Result<Matrix> {
    if !scores.is_finite() {
        return Err(AaiError::DegenerateInput(
            "score matrix contains non-finite values".into(),
        ));
    }
    let mut out = Matrix::zeros(scores.rows, scores.cols);
    for i in 0..scores.rows {
        softmax_row(scores.row(i), out.row_mut(i))
            .map_err(|_| AaiError::DegenerateRow { row: i })?;
    }
    Ok(out)
}

/// Stable softmax of one row of logits into `out`. `-inf` maps to exactly 0.
///
/// Returns `Err(())` when no logit is finite.
pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) -> std::result::Result<(), ()> {
    let max = logits
        .iter()
        .copied()
        .filter(|z| *z != f64::NEG_INFINITY)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(());
    }
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = if z == f64::NEG_INFINITY {
            0.0
        } else {
            (z - max).exp()
        };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// `h = A v`: row `i` of the output is the `A[i]`-weighted mix of the rows of `v`.
pub fn attend(weights: &Matrix, values: &Matrix) -> Result<Matrix> {
    if weights.cols != values.rows {
        return Err(AaiError::Shape(format!(
            "weights are {}x{} but values have {} rows",
            weights.rows, weights.cols, values.rows
        )));
    }
    weights.matmul(values)
}
