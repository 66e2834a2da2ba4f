//! Affine layers and two-layer perceptrons shared by the projection and attention blocks.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// `x · W + b` with `W ∈ R^{in×out}` and `b ∈ R^{1×out}`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        output: usize,
        seed: u64,
    ) -> Self {
        Dense {
            weight: store.register(&format!("{prefix}.w"), input, output, Init::Xavier, seed),
            bias: store.register(&format!("{prefix}.b"), 1, output, Init::Zeros, seed),
            input,
            output,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.affine(x, w, b)
    }
}

/// Two affine layers with a ramp between them.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub first: Dense,
    pub second: Dense,
}

impl Mlp {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        seed: u64,
    ) -> Self {
        Mlp {
            first: Dense::register(store, &format!("{prefix}.l1"), input, hidden, seed),
            second: Dense::register(store, &format!("{prefix}.l2"), hidden, output, seed),
        }
    }

    pub fn input_width(&self) -> usize {
        self.first.input
    }

    pub fn output_width(&self) -> usize {
        self.second.output
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.second.forward(tape, store, h)
    }
}

/// Per-modality projection from raw encoder width into the shared width `d`.
pub type ProjectionMlp = Mlp;

/// Applies a projection MLP row-wise, checking the raw width first.
pub fn project<S: Scalar>(tape: &mut Tape<S>, store: &ParamStore<S>, seq: Var, mlp: &ProjectionMlp) -> Result<Var> {
    let (_, width) = tape.shape(seq);
    if width != mlp.input_width() {
        return Err(Error::shape(
            "project",
            format!("input width {width}, projection expects {}", mlp.input_width()),
        ));
    }
    mlp.forward(tape, store, seq)
}

/// Scalar-output scoring head `x · w + b` with `w ∈ R^{d×1}` and a broadcast scalar `b`,
/// normalized by a softmax over the rows of `x`. Returns a `1×k` weight row.
#[derive(Clone, Copy, Debug)]
pub struct ImportanceHead {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ImportanceHead {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, d: usize, seed: u64) -> Self {
        ImportanceHead {
            weight: store.register(&format!("{prefix}.w"), d, 1, Init::Xavier, seed),
            bias: store.register(&format!("{prefix}.b"), 1, 1, Init::Zeros, seed),
        }
    }

    pub fn weights<S: Scalar>(&self, tape: &mut Tape<S>, store: &ParamStore<S>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let logits = tape.affine(x, w, b)?;
        let row = tape.transpose(logits)?;
        tape.softmax_rows(row)
    }
}
