//! Dense row-major matrices and the handful of kernels the encoder and the
//! attribution methods need.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default layer-norm epsilon, matching BERT-family checkpoints.
pub const DEFAULT_LN_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Contract(format!(
                    "ragged rows: row {i} has {} entries, expected {cols}",
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

    /// Convenience for literals in tests and fixtures.
    pub fn from_f64_rows(rows: &[&[f64]]) -> Result<Self> {
        let converted: Vec<Vec<T>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| T::narrow(v)).collect())
            .collect();
        Self::from_rows(&converted)
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

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics, and a 0-column matrix has no data anyway.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_nested(&self) -> Vec<Vec<T>> {
        self.iter_rows().map(|r| r.to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&self, bias: &[T]) -> Result<Self> {
        if bias.len() != self.cols {
            return Err(Error::DimensionMismatch {
                op: "add_row_vector",
                left: self.shape(),
                right: (1, bias.len()),
            });
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, &b) in out.row_mut(r).iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
        Ok(out)
    }

    /// Contiguous column block `[start, start + width)`.
    pub fn column_block(&self, start: usize, width: usize) -> Self {
        let mut out = Self::zeros(self.rows, width);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + width]);
        }
        out
    }

    /// Contiguous row block `[start, start + height)`.
    pub fn row_block(&self, start: usize, height: usize) -> Self {
        Self {
            rows: height,
            cols: self.cols,
            data: self.data[start * self.cols..(start + height) * self.cols].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::narrow(v.wide())).collect(),
        }
    }

    /// Largest absolute entry-wise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        if self.shape() != other.shape() {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.wide() - b.wide()).abs())
                .fold(0.0, f64::max),
        )
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut acc = vec![0.0f64; a.rows * b.cols];
    for i in 0..a.rows {
        let out = &mut acc[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            let aik = aik.wide();
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out.iter_mut().zip(b.row(k)) {
                *o += aik * bkj.wide();
            }
        }
    }
    Ok(Matrix {
        rows: a.rows,
        cols: b.cols,
        data: acc.into_iter().map(T::narrow).collect(),
    })
}

/// Row vector times matrix: `v · m`.
pub fn vec_mat<T: Scalar>(v: &[T], m: &Matrix<T>) -> Result<Vec<T>> {
    if v.len() != m.rows {
        return Err(Error::DimensionMismatch {
            op: "vec_mat",
            left: (1, v.len()),
            right: m.shape(),
        });
    }
    let mut acc = vec![0.0f64; m.cols];
    for (k, &vk) in v.iter().enumerate() {
        let vk = vk.wide();
        for (o, &mkj) in acc.iter_mut().zip(m.row(k)) {
            *o += vk * mkj.wide();
        }
    }
    Ok(acc.into_iter().map(T::narrow).collect())
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.wide() * y.wide()).sum()
}

/// In-place max-subtracted softmax of one row.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row
        .iter()
        .map(|v| v.wide())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v.wide() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    for (v, e) in row.iter_mut().zip(exps) {
        *v = T::narrow(e / total);
    }
}

pub fn stable_softmax_rows<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let mut out = m.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

/// Mean and standard deviation used by layer normalization:
/// `std = sqrt(population_variance + epsilon)`.
pub fn ln_moments<T: Scalar>(v: &[T], epsilon: f64) -> (T, T) {
    let (mean, std) = ln_moments_wide(v, epsilon);
    (T::narrow(mean), T::narrow(std))
}

pub(crate) fn ln_moments_wide<T: Scalar>(v: &[T], epsilon: f64) -> (f64, f64) {
    assert!(!v.is_empty(), "ln_moments of an empty vector");
    let n = v.len() as f64;
    let mean = v.iter().map(|x| x.wide()).sum::<f64>() / n;
    let var = v.iter().map(|x| (x.wide() - mean).powi(2)).sum::<f64>() / n;
    (mean, (var + epsilon).sqrt())
}

/// `(v - mean(v)) / std ⊙ gamma + beta`; also returns the std so callers can
/// reuse it for decompositions.
pub fn layer_norm<T: Scalar>(v: &[T], gamma: &[T], beta: &[T], epsilon: f64) -> (Vec<T>, T) {
    let (mean, std) = ln_moments_wide(v, epsilon);
    let out = v
        .iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&x, (&g, &b))| T::narrow((x.wide() - mean) / std * g.wide() + b.wide()))
        .collect();
    (out, T::narrow(std))
}

/// Row-wise layer normalization; returns the normalized matrix and per-row std.
pub fn layer_norm_rows<T: Scalar>(
    m: &Matrix<T>,
    gamma: &[T],
    beta: &[T],
    epsilon: f64,
) -> (Matrix<T>, Vec<T>) {
    let mut out = Matrix::zeros(m.rows, m.cols);
    let mut stds = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let (row, std) = layer_norm(m.row(i), gamma, beta, epsilon);
        out.row_mut(i).copy_from_slice(&row);
        stds.push(std);
    }
    (out, stds)
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    T::narrow(v.iter().map(|x| x.wide().powi(2)).sum::<f64>().sqrt())
}

pub fn frobenius_norm<T: Scalar>(m: &Matrix<T>) -> T {
    l2_norm(m.as_slice())
}
