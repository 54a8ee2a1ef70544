//! Dense 2-D real matrices and the small set of numerically careful kernels
//! every layer is built from.
//!
//! The whole model family works on tiny matrices (nothing larger than
//! 120x40), so storage is plain row-major `Vec` with no sparsity, no BLAS,
//! and no views. All kernels are pure: identical inputs produce bit-identical
//! outputs, which the determinism guarantees elsewhere in the crate rely on.
//!
//! The scalar type is generic over [`Scalar`]: `f32` for training and
//! inference, `f64` for gradient-check and factorization oracles that need
//! the extra headroom.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

/// Floating-point scalar usable as matrix element: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::NumAssign
    + Default
    + fmt::Debug
    + fmt::Display
    + Copy
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Elementwise activation functions, addressed by a stable string id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    /// Stable identifier used in configs and serialized specs.
    pub fn id(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
        }
    }

    /// Derivative evaluated at the pre-activation value. The relu derivative
    /// at exactly zero is taken as 0 (the usual subgradient choice).
    #[inline]
    pub fn derivative<S: Scalar>(self, pre: S) -> S {
        match self {
            Activation::Identity => S::one(),
            Activation::Relu => {
                if pre > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Dense row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2D<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Matrix2D<S> {
    /// Builds a matrix from row-major data; fails if the length does not
    /// match the declared shape.
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadDimensions {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Convenience constructor for tests and fixtures.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::BadDimensions {
                    rows: n_rows,
                    cols: n_cols,
                    expected: n_rows * n_cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix2D::new(n_rows, n_cols, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut S {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / self.cols, i % self.cols))
    }

    /// Standard matrix product, shape `(self.rows x other.cols)`.
    pub fn matmul(&self, other: &Matrix2D<S>) -> Result<Matrix2D<S>> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        let mut out = Matrix2D::zeros(self.rows, other.cols);
        // i-k-j loop order: streams over contiguous rows of `other` and
        // `out`, and accumulates each output element over ascending k, so the
        // summation order is fixed and the result is reproducible bit for bit.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b_kj) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b_kj;
                }
            }
        }
        Ok(out)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn hadamard(&self, other: &Matrix2D<S>) -> Result<Matrix2D<S>> {
        self.check_same_shape("hadamard", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .collect();
        Matrix2D::new(self.rows, self.cols, data)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Matrix2D<S>) -> Result<Matrix2D<S>> {
        self.check_same_shape("add", other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Matrix2D::new(self.rows, self.cols, data)
    }

    /// In-place elementwise sum; shapes must match exactly.
    pub fn add_assign(&mut self, other: &Matrix2D<S>) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Scales every element by a constant.
    pub fn scale(&self, factor: S) -> Matrix2D<S> {
        let data = self.data.iter().map(|&v| v * factor).collect();
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix2D<S> {
        let mut out = Matrix2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(c, r) = self.at(r, c);
            }
        }
        out
    }

    /// Row-wise softmax with row-max subtraction for overflow safety. Each
    /// output row is nonnegative and sums to 1. NaN input is rejected.
    pub fn row_softmax(&self) -> Result<Matrix2D<S>> {
        if let Some((row, col)) = self.first_non_finite() {
            return Err(Error::NonFinite {
                op: "row_softmax",
                row,
                col,
            });
        }
        let mut out = Matrix2D::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let out_row = &mut out.data[r * self.cols..(r + 1) * self.cols];
            let mut sum = S::zero();
            for (o, &v) in out_row.iter_mut().zip(row.iter()) {
                let e = (v - max).exp();
                *o = e;
                sum += e;
            }
            for o in out_row.iter_mut() {
                *o /= sum;
            }
        }
        Ok(out)
    }

    /// Applies a registered activation function elementwise.
    pub fn apply_elementwise(&self, activation: Activation) -> Matrix2D<S> {
        let data = self.data.iter().map(|&v| activation.apply(v)).collect();
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Sum of squared elements (used by factorization oracles).
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&v| v.as_f64() * v.as_f64()).sum()
    }

    /// Converts elementwise to another scalar width.
    pub fn cast<T: Scalar>(&self) -> Matrix2D<T> {
        Matrix2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::from_f64(v.as_f64())).collect(),
        }
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix2D<S>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: other.rows,
                rhs_cols: other.cols,
            });
        }
        Ok(())
    }
}
