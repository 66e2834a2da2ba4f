//! Patch and knowledge importance, the fused two-way classifier and its loss.

use crate::autodiff::{Axis, Tape, Var};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::layers::ImportanceHead;
use crate::params::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor applied inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

/// `y' = softmax(z W_yᵀ + b_y)` with `W_y ∈ R^{2×width}`.
#[derive(Clone, Copy, Debug)]
pub struct ClassifierParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct KnowledgeFusion {
    /// `p_k = softmax(K W_vᵏ + b)`
    pub importance: ImportanceHead,
    /// Fixed number of knowledge positions per score block; shorter sequences are zero-filled.
    pub slots: usize,
}

#[derive(Clone, Debug)]
pub struct FusionParams {
    /// `p_v = softmax(I W_v + b_v)`
    pub patch: ImportanceHead,
    pub classifier: ClassifierParams,
    pub knowledge: Option<KnowledgeFusion>,
}

impl FusionParams {
    pub fn register<S: Scalar>(store: &mut ParamStore<S>, config: &Config, patches: usize) -> Self {
        let (d, seed) = (config.d, config.seed);
        let scores = config.ablation.score_count();
        let patch = ImportanceHead::register(store, "fuse.patch", d, seed);
        let (knowledge, width, prefix) = if config.knowledge_enabled {
            let slots = config.knowledge_slots();
            let kf = KnowledgeFusion {
                importance: ImportanceHead::register(store, "fuse.k.importance", d, seed),
                slots,
            };
            (Some(kf), scores * (patches + slots), "fuse.k")
        } else {
            (None, scores * patches, "fuse")
        };
        let classifier = ClassifierParams {
            weight: store.register(&format!("{prefix}.wy"), 2, width, Init::Xavier, seed),
            bias: store.register(&format!("{prefix}.by"), 1, 2, Init::Zeros, seed),
            width,
        };
        FusionParams {
            patch,
            classifier,
            knowledge,
        }
    }
}

pub fn patch_importance<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    image: Var,
    head: &ImportanceHead,
) -> Result<Var> {
    head.weights(tape, store, image)
}

/// `[w ⊙ s₁ ∥ w ⊙ s₂ ∥ …]`, each block zero-filled to `slots` columns when given.
fn weighted_blocks<S: Scalar>(
    tape: &mut Tape<S>,
    weights: Var,
    scores: &[Var],
    slots: Option<usize>,
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(scores.len());
    for &s in scores {
        if tape.shape(s) != tape.shape(weights) {
            return Err(Error::shape(
                "fuse",
                format!("score {:?} vs importance {:?}", tape.shape(s), tape.shape(weights)),
            ));
        }
        let block = tape.hadamard(weights, s)?;
        match slots {
            Some(slots) => {
                let used = tape.shape(block).1;
                if used > slots {
                    return Err(Error::shape(
                        "fuse",
                        format!("{used} knowledge positions exceed {slots} slots"),
                    ));
                }
                if used < slots {
                    let pad = tape.constant(Tensor::zeros(1, slots - used));
                    out.push(tape.concat(&[block, pad], Axis::Cols)?);
                } else {
                    out.push(block);
                }
            }
            None => out.push(block),
        }
    }
    Ok(out)
}

/// Assembles the classifier input row from importance-weighted congruity scores.
pub fn classifier_input<S: Scalar>(
    tape: &mut Tape<S>,
    patch_weights: Var,
    image_scores: &[Var],
    knowledge: Option<(Var, &[Var], usize)>,
) -> Result<Var> {
    let mut blocks = weighted_blocks(tape, patch_weights, image_scores, None)?;
    if let Some((know_weights, know_scores, slots)) = knowledge {
        blocks.extend(weighted_blocks(tape, know_weights, know_scores, Some(slots))?);
    }
    tape.concat(&blocks, Axis::Cols)
}

/// Two-way class probabilities from a classifier input row.
pub fn classify<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    input: Var,
    params: &ClassifierParams,
) -> Result<Var> {
    let (_, width) = tape.shape(input);
    if width != params.width {
        return Err(Error::shape(
            "classify",
            format!("classifier input width {width}, expected {}", params.width),
        ));
    }
    let w = tape.param(store, params.weight);
    let b = tape.param(store, params.bias);
    let logits = tape.matmul_t(input, w)?;
    let logits = tape.add_broadcast(logits, b)?;
    tape.softmax_rows(logits)
}

/// `y' = softmax(W_y [p_v ⊙ s_a ∥ p_v ⊙ s_p] + b_y)`
pub fn fuse_predict<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    s_a: Var,
    s_p: Var,
    p_v: Var,
    params: &ClassifierParams,
) -> Result<Var> {
    let z = classifier_input(tape, p_v, &[s_a, s_p], None)?;
    classify(tape, store, z, params)
}

/// Knowledge-extended classifier over `[p_v⊙s_a ∥ p_v⊙s_p ∥ p_k⊙s_aᵏ ∥ p_k⊙s_pᵏ]`.
#[allow(clippy::too_many_arguments)]
pub fn fuse_predict_with_knowledge<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    s_a: Var,
    s_p: Var,
    s_a_k: Var,
    s_p_k: Var,
    p_v: Var,
    p_k: Var,
    params: &ClassifierParams,
    slots: usize,
) -> Result<Var> {
    let z = classifier_input(tape, p_v, &[s_a, s_p], Some((p_k, &[s_a_k, s_p_k], slots)))?;
    classify(tape, store, z, params)
}

/// `−ln(max(y'[label], 1e−12))`
pub fn cross_entropy<S: Scalar>(tape: &mut Tape<S>, probs: Var, label: u8) -> Result<Var> {
    if label > 1 {
        return Err(Error::Contract(format!("label {label} is not 0 or 1")));
    }
    if tape.shape(probs) != (1, 2) {
        return Err(Error::shape(
            "cross_entropy",
            format!("probabilities {:?}", tape.shape(probs)),
        ));
    }
    let p = tape.pick(probs, 0, label as usize)?;
    let ln = tape.ln_clamped(p, S::lit(PROB_FLOOR))?;
    tape.scale(ln, -S::one())
}
