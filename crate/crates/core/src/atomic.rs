//! Token-to-patch alignment: multi-head cross attention, the atomic similarity
//! matrix and the importance-weighted atomic congruity score.
//!
//! Text is always the query and the other modality supplies keys and values.
//! Each head computes `softmax((T W_q)(I W_k)ᵀ / √(d/h)) (I W_v)`; heads are
//! concatenated, passed through a two-layer MLP and added back to the query
//! before layer normalization.

use crate::autodiff::{Axis, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{ImportanceHead, Mlp};
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

#[derive(Clone, Debug)]
pub struct McaLayerParams {
    pub heads: Vec<HeadParams>,
    pub mlp: Mlp,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

/// `L` unshared cross-attention layers of width `d` with `h` heads.
#[derive(Clone, Debug)]
pub struct CrossAttentionParams {
    pub layers: Vec<McaLayerParams>,
    pub d: usize,
    pub heads: usize,
}

impl CrossAttentionParams {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        heads: usize,
        layers: usize,
        eps: f64,
        seed: u64,
    ) -> Result<Self> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::Config(format!("head count {heads} does not divide width {d}")));
        }
        let dh = d / heads;
        let layers = (0..layers)
            .map(|l| {
                let p = format!("{prefix}.{l}");
                McaLayerParams {
                    heads: (0..heads)
                        .map(|i| HeadParams {
                            query: store.register(&format!("{p}.head{i}.wq"), d, dh, Init::Xavier, seed),
                            key: store.register(&format!("{p}.head{i}.wk"), d, dh, Init::Xavier, seed),
                            value: store.register(&format!("{p}.head{i}.wv"), d, dh, Init::Xavier, seed),
                        })
                        .collect(),
                    mlp: Mlp::register(store, &format!("{p}.mlp"), d, d, d, seed),
                    gamma: store.register(&format!("{p}.ln.gamma"), 1, d, Init::Ones, seed),
                    beta: store.register(&format!("{p}.ln.beta"), 1, d, Init::Zeros, seed),
                    eps,
                }
            })
            .collect();
        Ok(CrossAttentionParams { layers, d, heads })
    }
}

/// Updated query plus the `n×r` attention maps, one per head.
#[derive(Clone, Debug)]
pub struct McaOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

pub fn mca_layer<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    query: Var,
    kv: Var,
    layer: &McaLayerParams,
) -> Result<McaOutput> {
    let (_, dq) = tape.shape(query);
    let (_, dk) = tape.shape(kv);
    let d = layer.mlp.input_width();
    if dq != d || dk != d {
        return Err(Error::shape(
            "mca_layer",
            format!("query width {dq}, key/value width {dk}, layer width {d}"),
        ));
    }
    let dh = d / layer.heads.len();
    let inv_sqrt = S::one() / S::lit(dh as f64).sqrt();
    let mut heads = Vec::with_capacity(layer.heads.len());
    let mut attention = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let (wq, wk, wv) = (
            tape.param(store, head.query),
            tape.param(store, head.key),
            tape.param(store, head.value),
        );
        let q = tape.matmul(query, wq)?;
        let k = tape.matmul(kv, wk)?;
        let v = tape.matmul(kv, wv)?;
        let scores = tape.matmul_t(q, k)?;
        let scores = tape.scale(scores, inv_sqrt)?;
        let weights = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(weights, v)?);
        attention.push(weights);
    }
    let joined = tape.concat(&heads, Axis::Cols)?;
    let mixed = layer.mlp.forward(tape, store, joined)?;
    let residual = tape.add(query, mixed)?;
    let gamma = tape.param(store, layer.gamma);
    let beta = tape.param(store, layer.beta);
    let output = tape.layer_norm_rows(residual, gamma, beta, S::lit(layer.eps))?;
    Ok(McaOutput { output, attention })
}

/// Runs every layer in order, feeding each layer's output back as the next query.
pub fn mca_stack<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    query: Var,
    kv: Var,
    params: &CrossAttentionParams,
) -> Result<McaOutput> {
    let mut current = query;
    let mut attention = Vec::new();
    for layer in &params.layers {
        let out = mca_layer(tape, store, current, kv, layer)?;
        current = out.output;
        attention.extend(out.attention);
    }
    Ok(McaOutput {
        output: current,
        attention,
    })
}

/// `Q = (1/√d) · A · Bᵀ` for row-aligned `A` (k×d) and `B` (r×d).
pub fn scaled_similarity<S: Scalar>(tape: &mut Tape<S>, a: Var, b: Var) -> Result<Var> {
    let (_, da) = tape.shape(a);
    let (_, db) = tape.shape(b);
    if da != db {
        return Err(Error::shape("similarity", format!("widths {da} and {db}")));
    }
    let raw = tape.matmul_t(a, b)?;
    tape.scale(raw, S::one() / S::lit(da as f64).sqrt())
}

/// Token-by-patch similarity matrix `Q_a ∈ R^{n×r}`.
pub fn atomic_similarity<S: Scalar>(tape: &mut Tape<S>, updated_text: Var, image: Var) -> Result<Var> {
    scaled_similarity(tape, updated_text, image)
}

/// Token importance head for atomic congruity.
pub type AtomicHeadParams = ImportanceHead;

/// Congruity row plus the importance weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct PooledScore {
    /// `1×r`
    pub score: Var,
    /// `1×n` softmax weights over rows of the similarity matrix.
    pub weights: Var,
}

/// `s_a = softmax(T̃ W_a + b_a)ᵀ Q_a`, a convex combination of the rows of `Q_a`.
pub fn atomic_congruity<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    updated_text: Var,
    similarity: Var,
    head: &AtomicHeadParams,
) -> Result<PooledScore> {
    pool_rows(tape, store, updated_text, similarity, head)
}

/// Weights the rows of `similarity` by an importance head evaluated on `features`.
pub(crate) fn pool_rows<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    features: Var,
    similarity: Var,
    head: &ImportanceHead,
) -> Result<PooledScore> {
    let (nf, _) = tape.shape(features);
    let (ns, _) = tape.shape(similarity);
    if nf != ns {
        return Err(Error::shape(
            "pool_rows",
            format!("{nf} feature rows, {ns} similarity rows"),
        ));
    }
    let weights = head.weights(tape, store, features)?;
    let score = tape.matmul(weights, similarity)?;
    Ok(PooledScore { score, weights })
}
