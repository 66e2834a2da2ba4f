//! Dense rank-2 tensors and the eager kernels the tape is built on.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix with an optional gradient accumulator.
///
/// Vectors are represented as `1×k` (row) or `k×1` (column) tensors; scalars as `1×1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from row-major data, rejecting length mismatches and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Self::from_vec_unchecked(rows, cols, data))
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Tensor {
            rows,
            cols,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    /// Convenience constructor from `f64` literals.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![S::zero(); rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: S) -> Self {
        Self::from_vec_unchecked(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = S::one();
        }
        t
    }

    pub fn scalar(value: S) -> Self {
        Self::from_vec_unchecked(1, 1, vec![value])
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: S) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Resets the gradient accumulator to zeros (allocating it if absent).
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = S::zero()),
            None => self.grad = Some(vec![S::zero(); self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `scale * delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &[S], scale: S) {
        assert_eq!(delta.len(), self.data.len(), "gradient shape mismatch");
        let grad = self.grad.get_or_insert_with(|| vec![S::zero(); delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g = *g + scale * *d;
        }
    }

    /// Replaces the value, keeping the shape. Used by optimizers and gradient checks.
    pub fn assign(&mut self, data: &[S]) {
        assert_eq!(data.len(), self.data.len(), "assign shape mismatch");
        self.data.copy_from_slice(data);
    }

    /// Value copy without the gradient accumulator.
    pub fn detached(&self) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        )
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        self.data.chunks(self.cols.max(1)).map(<[S]>::to_vec).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    /// Standard matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} · {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(matmul_kernel(self, rhs))
    }

    /// Product with the transposed right operand, `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.cols {
            return Err(Error::shape(
                "matmul_t",
                format!("{}x{} · ({}x{})ᵀ", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(matmul_t_kernel(self, rhs))
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.push(self.data[r * self.cols + c]);
            }
        }
        Self::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> S {
        self.data.iter().copied().sum()
    }
}

/// `a · b` with shape checks already done. i-k-j loop order keeps the inner loop contiguous.
pub(crate) fn matmul_kernel<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (p, q, s) = (a.rows, a.cols, b.cols);
    let mut out = vec![S::zero(); p * s];
    for i in 0..p {
        let out_row = &mut out[i * s..(i + 1) * s];
        for k in 0..q {
            let aik = a.data[i * q + k];
            if aik == S::zero() {
                continue;
            }
            let b_row = &b.data[k * s..(k + 1) * s];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
    Tensor::from_vec_unchecked(p, s, out)
}

/// `a · bᵀ`; both operands are walked row-wise.
pub(crate) fn matmul_t_kernel<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (p, q, s) = (a.rows, a.cols, b.rows);
    let mut out = Vec::with_capacity(p * s);
    for i in 0..p {
        let a_row = &a.data[i * q..(i + 1) * q];
        for j in 0..s {
            let b_row = &b.data[j * q..(j + 1) * q];
            out.push(a_row.iter().zip(b_row).fold(S::zero(), |acc, (&x, &y)| acc + x * y));
        }
    }
    Tensor::from_vec_unchecked(p, s, out)
}

/// `aᵀ · b`.
pub(crate) fn t_matmul_kernel<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (q, p, s) = (a.rows, a.cols, b.cols);
    let mut out = vec![S::zero(); p * s];
    for k in 0..q {
        let a_row = &a.data[k * p..(k + 1) * p];
        let b_row = &b.data[k * s..(k + 1) * s];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == S::zero() {
                continue;
            }
            let out_row = &mut out[i * s..(i + 1) * s];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aki * bv;
            }
        }
    }
    Tensor::from_vec_unchecked(p, s, out)
}
