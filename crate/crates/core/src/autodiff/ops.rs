//! Forward primitives. Every op checks shapes, records itself and rejects non-finite output.

use std::rc::Rc;

use rand::Rng;

use super::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{matmul_kernel, matmul_t_kernel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Stack vertically; column counts must match.
    Rows,
    /// Stack horizontally; row counts must match.
    Cols,
}

impl<S: Scalar> Tape<S> {
    fn record(&mut self, op_name: &'static str, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        Ok(self.push(value, op, requires_grad))
    }

    fn dims(&self, v: Var) -> String {
        let (r, c) = self.shape(v);
        format!("{r}x{c}")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).0 {
            return Err(Error::shape("matmul", format!("{} · {}", self.dims(a), self.dims(b))));
        }
        let out = matmul_kernel(self.value(a), self.value(b));
        self.record("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a).1 != self.shape(b).1 {
            return Err(Error::shape(
                "matmul_t",
                format!("{} · ({})ᵀ", self.dims(a), self.dims(b)),
            ));
        }
        let out = matmul_t_kernel(self.value(a), self.value(b));
        self.record("matmul_t", out, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{} + {}", self.dims(a), self.dims(b))));
        }
        let (r, c) = self.shape(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        self.record("add", Tensor::from_vec_unchecked(r, c, data), Op::Add(a, b), &[a, b])
    }

    /// Adds a `1×cols` row to every row of `x`, or a `1×1` scalar to every entry.
    pub fn add_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let bias_shape = self.shape(bias);
        if bias_shape != (1, c) && bias_shape != (1, 1) {
            return Err(Error::shape(
                "add_broadcast",
                format!("bias {} does not broadcast over {}", self.dims(bias), self.dims(x)),
            ));
        }
        let b = self.value(bias).data();
        let data: Vec<S> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if b.len() == 1 { b[0] } else { b[i % c] })
            .collect();
        self.record(
            "add_broadcast",
            Tensor::from_vec_unchecked(r, c, data),
            Op::AddBroadcast(x, bias),
            &[x, bias],
        )
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var> {
        let out = self.value(a).map(|v| v * factor);
        self.record("scale", out, Op::Scale(a, factor), &[a])
    }

    /// Elementwise product of equal-shape tensors.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("hadamard", format!("{} ⊙ {}", self.dims(a), self.dims(b))));
        }
        let (r, c) = self.shape(a);
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        self.record(
            "hadamard",
            Tensor::from_vec_unchecked(r, c, data),
            Op::Hadamard(a, b),
            &[a, b],
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(S::zero()));
        self.record("relu", out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        if !(slope > S::zero() && slope < S::one()) {
            return Err(Error::Config(format!("leaky relu slope {slope} outside (0,1)")));
        }
        let out = self.value(a).map(|v| if v >= S::zero() { v } else { v * slope });
        self.record("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 || c == 0 {
            return Err(Error::shape("softmax_rows", format!("empty input {}", self.dims(a))));
        }
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row, None);
        }
        self.record(
            "softmax_rows",
            Tensor::from_vec_unchecked(r, c, data),
            Op::SoftmaxRows(a),
            &[a],
        )
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked entries are exactly 0.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(a);
        if mask.len() != r * c || r == 0 || c == 0 {
            return Err(Error::shape(
                "masked_softmax_rows",
                format!("mask of {} entries over {}", mask.len(), self.dims(a)),
            ));
        }
        if mask.chunks(c).any(|m| !m.iter().any(|&x| x)) {
            return Err(Error::Contract("masked softmax row with no admissible entry".into()));
        }
        let mut data = self.value(a).data().to_vec();
        for (row, m) in data.chunks_mut(c).zip(mask.chunks(c)) {
            softmax_in_place(row, Some(m));
        }
        self.record(
            "masked_softmax_rows",
            Tensor::from_vec_unchecked(r, c, data),
            Op::MaskedSoftmaxRows(a),
            &[a],
        )
    }

    /// Standardizes each row (population variance) then applies `gamma ⊙ x̂ + beta`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(Error::shape(
                "layer_norm_rows",
                format!(
                    "gamma {} / beta {} over {}",
                    self.dims(gamma),
                    self.dims(beta),
                    self.dims(x)
                ),
            ));
        }
        if eps.is_nan() || eps <= S::zero() {
            return Err(Error::Config("layer norm eps must be positive".into()));
        }
        let n = S::lit(c as f64);
        let mut normalized = Vec::with_capacity(r * c);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.value(x).data().chunks(c) {
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = S::one() / (var + eps).sqrt();
            normalized.extend(row.iter().map(|&v| (v - mean) * inv));
            inv_std.push(inv);
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out: Vec<S> = normalized
            .iter()
            .enumerate()
            .map(|(i, &v)| g[i % c] * v + b[i % c])
            .collect();
        self.record(
            "layer_norm_rows",
            Tensor::from_vec_unchecked(r, c, out),
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let (r0, c0) = self.shape(first);
        let out = match axis {
            Axis::Rows => {
                if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).1 != c0) {
                    return Err(Error::shape(
                        "concat",
                        format!("row stack of {} with {}", self.dims(first), self.dims(bad)),
                    ));
                }
                let rows = parts.iter().map(|&p| self.shape(p).0).sum();
                let data = parts
                    .iter()
                    .flat_map(|&p| self.value(p).data().iter().copied())
                    .collect();
                Tensor::from_vec_unchecked(rows, c0, data)
            }
            Axis::Cols => {
                if let Some(&bad) = parts.iter().find(|&&p| self.shape(p).0 != r0) {
                    return Err(Error::shape(
                        "concat",
                        format!("column stack of {} with {}", self.dims(first), self.dims(bad)),
                    ));
                }
                let cols = parts.iter().map(|&p| self.shape(p).1).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for row in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(row));
                    }
                }
                Tensor::from_vec_unchecked(r0, cols, data)
            }
        };
        self.record("concat", out, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.record("transpose", out, Op::Transpose(a), &[a])
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > r || len == 0 {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} of {}", start + len, self.dims(a)),
            ));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        self.record(
            "slice_rows",
            Tensor::from_vec_unchecked(len, c, data),
            Op::SliceRows(a, start),
            &[a],
        )
    }

    /// `out[i][j] = a[i] + b[j]` for column vectors `a` (k×1) and `b` (k'×1).
    pub fn outer_sum(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ca != 1 || cb != 1 {
            return Err(Error::shape(
                "outer_sum",
                format!("{} ⊕ {}", self.dims(a), self.dims(b)),
            ));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data = av.iter().flat_map(|&x| bv.iter().map(move |&y| x + y)).collect();
        self.record(
            "outer_sum",
            Tensor::from_vec_unchecked(ra, rb, data),
            Op::OuterSum(a, b),
            &[a, b],
        )
    }

    /// Inverted dropout: survivors scaled by `1/(1-rate)`; identity outside training.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, rng_seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0,1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::lit(1.0 / (1.0 - rate));
        let mut r = rng::stream(rng_seed);
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| {
                if r.random::<f64>() < rate {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let (rows, cols) = self.shape(x);
        let data = zip_map(self.value(x).data(), &mask, |v, m| v * m);
        self.record(
            "dropout",
            Tensor::from_vec_unchecked(rows, cols, data),
            Op::MaskMul(x, Rc::new(mask)),
            &[x],
        )
    }

    /// Extracts entry `(r, c)` as a `1×1` node.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if r >= rows || c >= cols {
            return Err(Error::shape("pick", format!("({r},{c}) outside {}", self.dims(a))));
        }
        let flat = r * cols + c;
        let v = self.value(a).data()[flat];
        self.record("pick", Tensor::scalar(v), Op::Pick(a, flat), &[a])
    }

    /// `ln(max(x, floor))` elementwise.
    pub fn ln_clamped(&mut self, a: Var, floor: S) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(floor).ln());
        self.record("ln_clamped", out, Op::LnClamped(a, floor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Column-wise mean over rows, producing `1×cols`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if r == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let inv = S::one() / S::lit(r as f64);
        let mut out = vec![S::zero(); c];
        for row in self.value(a).data().chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o = *o + v;
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        self.record(
            "mean_rows",
            Tensor::from_vec_unchecked(1, c, out),
            Op::MeanRows(a),
            &[a],
        )
    }

    /// `x · W + b` with `W` stored `in×out` and `b` a `1×out` row (or `1×1` scalar).
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, weight)?;
        self.add_broadcast(xw, bias)
    }
}

fn zip_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn softmax_in_place<S: Scalar>(row: &mut [S], mask: Option<&[bool]>) {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| allowed(i))
        .fold(S::neg_infinity(), |m, (_, &v)| m.max(v));
    let mut total = S::zero();
    for (i, v) in row.iter_mut().enumerate() {
        if allowed(i) {
            *v = (*v - max).exp();
            total = total + *v;
        } else {
            *v = S::zero();
        }
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
