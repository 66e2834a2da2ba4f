//! One text-to-context congruity branch: cross attention, atomic pooling, graph
//! propagation and composition pooling. The text-image path and the
//! text-knowledge path are two instances with disjoint parameters.

use crate::atomic::{
    atomic_congruity, atomic_similarity, mca_stack, AtomicHeadParams, CrossAttentionParams, PooledScore,
};
use crate::autodiff::{Tape, Var};
use crate::composition::{
    composition_congruity, sentence_embedding, CompositionHeadParams, CompositionOutput, GatStack, SentenceOutput,
    SentencePooling,
};
use crate::config::{Config, SentenceMode, SentenceWeights};
use crate::error::Result;
use crate::graph::ModalityGraph;
use crate::layers::ImportanceHead;
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct CompositionParams {
    pub query_gat: GatStack,
    pub context_gat: GatStack,
    pub sentence: SentencePooling,
    pub head: CompositionHeadParams,
}

#[derive(Clone, Debug)]
pub struct BranchParams {
    /// `None` when cross attention is ablated; the query then passes through unchanged.
    pub mca: Option<CrossAttentionParams>,
    pub atomic: Option<AtomicHeadParams>,
    pub composition: Option<CompositionParams>,
    pub sentence_weights: SentenceWeights,
}

impl BranchParams {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        config: &Config,
        mca_layers: usize,
    ) -> Result<Self> {
        let (d, seed, ablation) = (config.d, config.seed, config.ablation);
        let mca = if ablation.uses_mca() {
            Some(CrossAttentionParams::register(
                store,
                &format!("{prefix}.mca"),
                d,
                config.heads,
                mca_layers,
                config.layer_norm_eps,
                seed,
            )?)
        } else {
            None
        };
        let atomic = ablation
            .uses_atomic()
            .then(|| ImportanceHead::register(store, &format!("{prefix}.atomic"), d, seed));
        let composition = ablation.uses_composition().then(|| {
            let gat = |store: &mut ParamStore<S>, which: &str| {
                GatStack::register(
                    store,
                    &format!("{prefix}.gat_{which}"),
                    d,
                    config.gat_layers,
                    config.leaky_relu_slope,
                    config.gat_activation,
                    seed,
                )
            };
            let query_gat = gat(store, "query");
            let context_gat = gat(store, "context");
            let sentence = match config.sentence_mode {
                SentenceMode::Weighted => {
                    SentencePooling::Weighted(ImportanceHead::register(store, &format!("{prefix}.sentence"), d, seed))
                }
                SentenceMode::Uniform => SentencePooling::Uniform,
            };
            CompositionParams {
                query_gat,
                context_gat,
                sentence,
                head: ImportanceHead::register(store, &format!("{prefix}.composition"), d, seed),
            }
        });
        Ok(BranchParams {
            mca,
            atomic,
            composition,
            sentence_weights: config.sentence_weights,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AtomicTrace {
    /// `n×k` token-to-context similarity.
    pub similarity: Var,
    pub pooled: PooledScore,
}

#[derive(Clone, Debug)]
pub struct AlignTrace {
    /// Query after cross attention (the query itself when attention is ablated).
    pub updated: Var,
    pub mca_attention: Vec<Var>,
    pub atomic: Option<AtomicTrace>,
}

#[derive(Clone, Debug)]
pub struct ComposeTrace {
    pub query_hat: Var,
    pub context_hat: Var,
    pub gat_attention: Vec<Var>,
    pub sentence: SentenceOutput,
    pub output: CompositionOutput,
}

#[derive(Clone, Debug)]
pub struct BranchTrace {
    pub align: AlignTrace,
    pub compose: Option<ComposeTrace>,
}

impl BranchTrace {
    /// `1×k` atomic score, if computed.
    pub fn atomic_score(&self) -> Option<Var> {
        self.align.atomic.as_ref().map(|a| a.pooled.score)
    }

    pub fn composition_score(&self) -> Option<Var> {
        self.compose.as_ref().map(|c| c.output.pooled.score)
    }

    /// Every softmax-normalized tensor this branch produced.
    pub fn distributions(&self) -> Vec<Var> {
        let mut out = self.align.mca_attention.clone();
        if let Some(a) = &self.align.atomic {
            out.push(a.pooled.weights);
        }
        if let Some(c) = &self.compose {
            out.extend(c.gat_attention.iter().copied());
            out.extend(c.sentence.weights);
            out.push(c.output.pooled.weights);
        }
        out
    }
}

impl BranchParams {
    /// Cross attention of `query` over `context`, then the atomic score.
    pub fn align<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        query: Var,
        context: Var,
    ) -> Result<AlignTrace> {
        let (updated, mca_attention) = match &self.mca {
            Some(mca) => {
                let out = mca_stack(tape, store, query, context, mca)?;
                (out.output, out.attention)
            }
            None => (query, Vec::new()),
        };
        let atomic = match &self.atomic {
            Some(head) => {
                let similarity = atomic_similarity(tape, updated, context)?;
                let pooled = atomic_congruity(tape, store, updated, similarity, head)?;
                Some(AtomicTrace { similarity, pooled })
            }
            None => None,
        };
        Ok(AlignTrace {
            updated,
            mca_attention,
            atomic,
        })
    }

    /// Graph propagation on both sides and the composition score.
    #[allow(clippy::too_many_arguments)]
    pub fn compose<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        query_input: Var,
        updated: Var,
        context: Var,
        query_graph: &ModalityGraph,
        context_graph: &ModalityGraph,
    ) -> Result<Option<ComposeTrace>> {
        let Some(comp) = &self.composition else {
            return Ok(None);
        };
        let (query_hat, mut gat_attention) = comp.query_gat.forward(tape, store, updated, query_graph)?;
        let (context_hat, context_attention) = comp.context_gat.forward(tape, store, context, context_graph)?;
        gat_attention.extend(context_attention);
        let weight_input = match self.sentence_weights {
            SentenceWeights::Input => query_input,
            SentenceWeights::Updated => updated,
        };
        let sentence = sentence_embedding(tape, store, weight_input, updated, &comp.sentence)?;
        let output = composition_congruity(tape, store, query_hat, sentence.embedding, context_hat, &comp.head)?;
        Ok(Some(ComposeTrace {
            query_hat,
            context_hat,
            gat_attention,
            sentence,
            output,
        }))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        store: &ParamStore<S>,
        query: Var,
        context: Var,
        query_graph: &ModalityGraph,
        context_graph: &ModalityGraph,
    ) -> Result<BranchTrace> {
        let align = self.align(tape, store, query, context)?;
        let compose = self.compose(tape, store, query, align.updated, context, query_graph, context_graph)?;
        Ok(BranchTrace { align, compose })
    }
}
