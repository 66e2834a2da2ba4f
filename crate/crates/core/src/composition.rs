//! Graph attention over token and patch graphs, the sentence embedding and the
//! composition-level congruity score.

use crate::atomic::{pool_rows, scaled_similarity, PooledScore};
use crate::autodiff::{Axis, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::ModalityGraph;
use crate::layers::ImportanceHead;
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// One single-head GAT layer: `Θ ∈ R^{d×d}` and attention vector `v ∈ R^{2d}`.
#[derive(Clone, Copy, Debug)]
pub struct GatLayerParams {
    pub theta: ParamId,
    pub attn: ParamId,
    pub d: usize,
    pub slope: f64,
}

impl GatLayerParams {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, prefix: &str, d: usize, slope: f64, seed: u64) -> Self {
        GatLayerParams {
            theta: store.register(&format!("{prefix}.theta"), d, d, Init::Xavier, seed),
            attn: store.register(&format!("{prefix}.v"), 2 * d, 1, Init::Xavier, seed),
            d,
            slope,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GatOutput {
    pub output: Var,
    /// `k×k` attention; row `i` is supported on `N(i) ∪ {i}`.
    pub attention: Var,
}

/// `e_ij = LeakyReLU(vᵀ[Θx_i ∥ Θx_j])`, `α_i = softmax_j(e_ij)` over `N(i) ∪ {i}`,
/// `x'_i = Σ_j α_ij Θ x_j`.
///
/// The score splits as `v_selfᵀ Θx_i + v_nbrᵀ Θx_j`, so the full `k×k` score
/// matrix is an outer sum of two projected columns, masked to the graph.
pub fn gat_layer<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    x: Var,
    graph: &ModalityGraph,
    params: &GatLayerParams,
) -> Result<GatOutput> {
    let (k, d) = tape.shape(x);
    if graph.node_count() != k {
        return Err(Error::shape(
            "gat_layer",
            format!("graph has {} nodes, features have {k} rows", graph.node_count()),
        ));
    }
    if d != params.d {
        return Err(Error::shape(
            "gat_layer",
            format!("feature width {d}, layer width {}", params.d),
        ));
    }
    let theta = tape.param(store, params.theta);
    let v = tape.param(store, params.attn);
    let projected = tape.matmul_t(x, theta)?;
    let v_self = tape.slice_rows(v, 0, d)?;
    let v_nbr = tape.slice_rows(v, d, d)?;
    let src = tape.matmul(projected, v_self)?;
    let dst = tape.matmul(projected, v_nbr)?;
    let scores = tape.outer_sum(src, dst)?;
    let scores = tape.leaky_relu(scores, S::lit(params.slope))?;
    let attention = tape.masked_softmax_rows(scores, &graph.attention_mask())?;
    let output = tape.matmul(attention, projected)?;
    Ok(GatOutput { output, attention })
}

#[derive(Clone, Debug)]
pub struct GatStack {
    pub layers: Vec<GatLayerParams>,
    /// Ramp between consecutive layers. Off by default: the layer update has no activation.
    pub inter_layer_activation: bool,
}

impl GatStack {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        d: usize,
        layers: usize,
        slope: f64,
        inter_layer_activation: bool,
        seed: u64,
    ) -> Self {
        GatStack {
            layers: (0..layers)
                .map(|l| GatLayerParams::register(store, &format!("{prefix}.{l}"), d, slope, seed))
                .collect(),
            inter_layer_activation,
        }
    }

    /// Final node features and each layer's attention.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        x: Var,
        graph: &ModalityGraph,
    ) -> Result<(Var, Vec<Var>)> {
        let mut current = x;
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 && self.inter_layer_activation {
                current = tape.relu(current)?;
            }
            let out = gat_layer(tape, store, current, graph, layer)?;
            current = out.output;
            attention.push(out.attention);
        }
        Ok((current, attention))
    }
}

/// How the sentence vector `c` pools token features.
#[derive(Clone, Copy, Debug)]
pub enum SentencePooling {
    /// `c = softmax(X W_c + b_c)ᵀ T̃`
    Weighted(ImportanceHead),
    /// `c = mean of the rows of T̃`
    Uniform,
}

#[derive(Clone, Copy, Debug)]
pub struct SentenceOutput {
    /// `1×d`
    pub embedding: Var,
    pub weights: Option<Var>,
}

/// Sentence embedding. Importance is scored on `weight_input`, values come from `values`.
pub fn sentence_embedding<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    weight_input: Var,
    values: Var,
    pooling: &SentencePooling,
) -> Result<SentenceOutput> {
    if tape.shape(weight_input).0 != tape.shape(values).0 {
        return Err(Error::shape(
            "sentence_embedding",
            format!(
                "{:?} weight rows vs {:?} value rows",
                tape.shape(weight_input),
                tape.shape(values)
            ),
        ));
    }
    match pooling {
        SentencePooling::Weighted(head) => {
            let pooled = pool_rows(tape, store, weight_input, values, head)?;
            Ok(SentenceOutput {
                embedding: pooled.score,
                weights: Some(pooled.weights),
            })
        }
        SentencePooling::Uniform => Ok(SentenceOutput {
            embedding: tape.mean_rows(values)?,
            weights: None,
        }),
    }
}

pub type CompositionHeadParams = ImportanceHead;

#[derive(Clone, Copy, Debug)]
pub struct CompositionOutput {
    /// `(n+1)×r`
    pub similarity: Var,
    pub pooled: PooledScore,
}

/// Appends `c` as an extra text node, forms `Q_p = (1/√d)[T̂ ∥ c] Îᵀ` and pools
/// its rows with importance scored on `[T̂ ∥ c]`.
pub fn composition_congruity<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    text_hat: Var,
    sentence: Var,
    image_hat: Var,
    head: &CompositionHeadParams,
) -> Result<CompositionOutput> {
    let augmented = tape.concat(&[text_hat, sentence], Axis::Rows)?;
    let similarity = scaled_similarity(tape, augmented, image_hat)?;
    let pooled = pool_rows(tape, store, augmented, similarity, head)?;
    Ok(CompositionOutput { similarity, pooled })
}
