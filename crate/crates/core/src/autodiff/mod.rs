//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive executed during a forward pass. Each
//! recorded node owns its forward value; [`Tape::backward`] walks the nodes in
//! reverse execution order and accumulates adjoints into a [`Gradients`]
//! table. Parameter leaves remember their [`ParamId`] so the resulting
//! gradients can be folded back into a [`ParamStore`].

mod ops;

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{matmul_kernel, matmul_t_kernel, t_matmul_kernel, Tensor};

pub use ops::Axis;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<S> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, S),
    Hadamard(Var, Var),
    MaskMul(Var, Rc<Vec<S>>),
    Relu(Var),
    LeakyRelu(Var, S),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
    },
    Concat(Vec<Var>, Axis),
    Transpose(Var),
    SliceRows(Var, usize),
    OuterSum(Var, Var),
    Pick(Var, usize),
    LnClamped(Var, S),
    Sum(Var),
    MeanRows(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Ordered record of executed primitives.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    param_vars: HashMap<ParamId, Var>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Its `requires_grad` flag decides whether backward reports a gradient for it.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        let requires_grad = value.requires_grad();
        self.push(value.detached(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value.detached(), Op::Leaf, false)
    }

    /// Binds a stored parameter. Repeated calls for the same id return the same node.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let tensor = store.tensor(id);
        let var = self.push(tensor.detached(), Op::Param, tensor.requires_grad());
        self.param_vars.insert(id, var);
        var
    }

    pub fn value(&self, var: Var) -> &Tensor<S> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    /// Scalar value of a `1×1` node.
    pub fn item(&self, var: Var) -> S {
        let v = self.value(var);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visit_order = Vec::new();
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visit_order.push(Var(idx));
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            visit_order,
            params: self.param_vars.iter().map(|(&id, &v)| (id, v)).collect(),
        })
    }

    /// Runs backward and adds `scale · ∂loss/∂θ` into every bound parameter's gradient.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<S>, scale: S) -> Result<Gradients<S>> {
        let grads = self.backward(loss)?;
        grads.accumulate_into(store, scale);
        Ok(grads)
    }

    fn backprop_node(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let gt = Tensor::from_vec_unchecked(out_shape.0, out_shape.1, g.to_vec());
                if needs(*a) {
                    accumulate(grads, *a, matmul_t_kernel(&gt, val(*b)).data());
                }
                if needs(*b) {
                    accumulate(grads, *b, t_matmul_kernel(val(*a), &gt).data());
                }
            }
            Op::MatMulT(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let gt = Tensor::from_vec_unchecked(out_shape.0, out_shape.1, g.to_vec());
                if needs(*a) {
                    accumulate(grads, *a, matmul_kernel(&gt, val(*b)).data());
                }
                if needs(*b) {
                    accumulate(grads, *b, t_matmul_kernel(&gt, val(*a)).data());
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        accumulate(grads, v, g);
                    }
                }
            }
            Op::AddBroadcast(x, b) => {
                if needs(*x) {
                    accumulate(grads, *x, g);
                }
                if needs(*b) {
                    let bw = val(*b).cols();
                    let mut gb = vec![S::zero(); bw];
                    if bw == 1 {
                        gb[0] = g.iter().copied().sum();
                    } else {
                        for row in g.chunks(bw) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc = *acc + v;
                            }
                        }
                    }
                    accumulate(grads, *b, &gb);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    let d: Vec<S> = g.iter().map(|&v| v * *c).collect();
                    accumulate(grads, *a, &d);
                }
            }
            Op::Hadamard(a, b) => {
                if needs(*a) {
                    let d: Vec<S> = g.iter().zip(val(*b).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *a, &d);
                }
                if needs(*b) {
                    let d: Vec<S> = g.iter().zip(val(*a).data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, *b, &d);
                }
            }
            Op::MaskMul(a, mask) => {
                let d: Vec<S> = g.iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect();
                accumulate(grads, *a, &d);
            }
            Op::Relu(a) => {
                let d: Vec<S> = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&x, &v)| if v > S::zero() { x } else { S::zero() })
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::LeakyRelu(a, slope) => {
                let d: Vec<S> = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&x, &v)| if v >= S::zero() { x } else { x * *slope })
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                let cols = out_shape.1;
                let y = node.value.data();
                let mut d = vec![S::zero(); y.len()];
                for ((dr, yr), gr) in d.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                    let dot: S = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for ((o, &p), &q) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, *a, &d);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = out_shape;
                let gam = val(*gamma).data();
                if needs(*x) {
                    let n = S::lit(cols as f64);
                    let mut dx = vec![S::zero(); rows * cols];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xr = &normalized[r * cols..(r + 1) * cols];
                        let dxhat: Vec<S> = gr.iter().zip(gam).map(|(&a, &b)| a * b).collect();
                        let sum_d: S = dxhat.iter().copied().sum();
                        let sum_dx: S = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum();
                        let scale = inv_std[r] / n;
                        for c in 0..cols {
                            dx[r * cols + c] = scale * (n * dxhat[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    accumulate(grads, *x, &dx);
                }
                if needs(*gamma) {
                    let mut dg = vec![S::zero(); cols];
                    for (gr, xr) in g.chunks(cols).zip(normalized.chunks(cols)) {
                        for ((o, &a), &b) in dg.iter_mut().zip(gr).zip(xr) {
                            *o = *o + a * b;
                        }
                    }
                    accumulate(grads, *gamma, &dg);
                }
                if needs(*beta) {
                    let mut db = vec![S::zero(); cols];
                    for gr in g.chunks(cols) {
                        for (o, &a) in db.iter_mut().zip(gr) {
                            *o = *o + a;
                        }
                    }
                    accumulate(grads, *beta, &db);
                }
            }
            Op::Concat(parts, Axis::Rows) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if needs(p) {
                        accumulate(grads, p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::Concat(parts, Axis::Cols) => {
                let (rows, cols) = out_shape;
                let mut col_offset = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * cols + col_offset..r * cols + col_offset + pc]);
                        }
                        accumulate(grads, p, &d);
                    }
                    col_offset += pc;
                }
            }
            Op::Transpose(a) => {
                let gt = Tensor::from_vec_unchecked(out_shape.0, out_shape.1, g.to_vec()).transpose();
                accumulate(grads, *a, gt.data());
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let mut d = vec![S::zero(); src.len()];
                let off = start * src.cols();
                d[off..off + g.len()].copy_from_slice(g);
                accumulate(grads, *a, &d);
            }
            Op::OuterSum(a, b) => {
                let (rows, cols) = out_shape;
                if needs(*a) {
                    let d: Vec<S> = g.chunks(cols).map(|r| r.iter().copied().sum()).collect();
                    accumulate(grads, *a, &d);
                }
                if needs(*b) {
                    let mut d = vec![S::zero(); cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] = d[c] + g[r * cols + c];
                        }
                    }
                    accumulate(grads, *b, &d);
                }
            }
            Op::Pick(a, flat) => {
                let mut d = vec![S::zero(); val(*a).len()];
                d[*flat] = g[0];
                accumulate(grads, *a, &d);
            }
            Op::LnClamped(a, floor) => {
                let d: Vec<S> = g
                    .iter()
                    .zip(val(*a).data())
                    .map(|(&x, &v)| if v > *floor { x / v } else { S::zero() })
                    .collect();
                accumulate(grads, *a, &d);
            }
            Op::Sum(a) => {
                let d = vec![g[0]; val(*a).len()];
                accumulate(grads, *a, &d);
            }
            Op::MeanRows(a) => {
                let src = val(*a);
                let inv = S::one() / S::lit(src.rows() as f64);
                let row: Vec<S> = g.iter().map(|&v| v * inv).collect();
                let d: Vec<S> = (0..src.rows()).flat_map(|_| row.iter().copied()).collect();
                accumulate(grads, *a, &d);
            }
        }
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], var: Var, delta: &[S]) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (e, &d) in existing.iter_mut().zip(delta) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Adjoints produced by one [`Tape::backward`] call.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    visit_order: Vec<Var>,
    params: Vec<(ParamId, Var)>,
}

impl<S: Scalar> Gradients<S> {
    /// `∂loss/∂var`, or `None` when the loss does not depend on `var`
    /// or `var` does not require a gradient.
    pub fn wrt(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Nodes whose adjoint was propagated, in the order backward visited them.
    pub fn visit_order(&self) -> &[Var] {
        &self.visit_order
    }

    pub fn accumulate_into(&self, store: &mut ParamStore<S>, scale: S) {
        for &(id, var) in &self.params {
            let tensor = store.tensor_mut(id);
            if !tensor.requires_grad() {
                continue;
            }
            match self.wrt(var) {
                Some(g) => tensor.accumulate_grad(g, scale),
                // Unreached parameter: its gradient is zero, but it still counts as populated.
                None if tensor.grad().is_none() => tensor.zero_grad(),
                None => {}
            }
        }
    }
}
