//! Knowledge as a third, text-like modality.
//!
//! The aligned text `T̃` (already attended over the image) queries the
//! knowledge tokens `K` through its own cross-attention stack, giving `T̃ᵏ` and
//! the atomic score `s_aᵏ ∈ R^{1×m}`. The composition score `s_pᵏ` runs a
//! fresh text GAT over `T̃ᵏ` on the text dependency graph and a knowledge GAT
//! over `K` on the knowledge dependency graph.

use crate::autodiff::{Tape, Var};
use crate::branch::{AlignTrace, BranchParams, ComposeTrace};
use crate::config::Config;
use crate::error::Result;
use crate::graph::ModalityGraph;
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Text-knowledge branch parameters, disjoint from the text-image branch.
#[derive(Clone, Debug)]
pub struct KnowledgeParams {
    pub branch: BranchParams,
}

impl KnowledgeParams {
    pub const PREFIX: &'static str = "tk";

    pub fn register<S: Scalar>(store: &mut ParamStore<S>, config: &Config) -> Result<Self> {
        Ok(KnowledgeParams {
            branch: BranchParams::register(store, Self::PREFIX, config, config.mca_layers_text_knowledge)?,
        })
    }
}

/// Returns `T̃ᵏ` and the atomic trace (`Q_aᵏ`, `s_aᵏ`) when the atomic score is enabled.
pub fn knowledge_atomic<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    aligned_text: Var,
    knowledge: Var,
    params: &KnowledgeParams,
) -> Result<AlignTrace> {
    params.branch.align(tape, store, aligned_text, knowledge)
}

/// `s_pᵏ` from the graph-propagated knowledge-aligned text and knowledge tokens.
#[allow(clippy::too_many_arguments)]
pub fn knowledge_composition<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore<S>,
    aligned_text: Var,
    knowledge_aligned_text: Var,
    knowledge: Var,
    text_graph: &ModalityGraph,
    knowledge_graph: &ModalityGraph,
    params: &KnowledgeParams,
) -> Result<Option<ComposeTrace>> {
    params.branch.compose(
        tape,
        store,
        aligned_text,
        knowledge_aligned_text,
        knowledge,
        text_graph,
        knowledge_graph,
    )
}
