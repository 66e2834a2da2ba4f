//! The full congruity model: projections, the text-image branch, the optional
//! text-knowledge branch and the fused classifier.

use crate::autodiff::{Tape, Var};
use crate::branch::{BranchParams, BranchTrace};
use crate::config::Config;
use crate::data::{DatasetHeader, Sample};
use crate::error::{Error, Result};
use crate::fusion::{classifier_input, classify, cross_entropy, patch_importance, FusionParams};
use crate::graph::{build_grid_graph, build_text_graph, ModalityGraph};
use crate::knowledge::{knowledge_atomic, knowledge_composition, KnowledgeParams};
use crate::layers::{project, ProjectionMlp};
use crate::params::ParamStore;
use crate::rng::{self, Site};
use crate::scalar::Scalar;

/// Forward-pass mode. Training enables dropout with masks keyed on `(seed, site, step, slot)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { step: u64, slot: u64 },
}

impl Mode {
    fn dropout_key(self, seed: u64, site: Site) -> (bool, u64) {
        match self {
            Mode::Eval => (false, 0),
            Mode::Train { step, slot } => (true, rng::derive(seed, site, &[step, slot])),
        }
    }
}

#[derive(Clone, Debug)]
struct Parts {
    proj_text: ProjectionMlp,
    proj_image: ProjectionMlp,
    proj_knowledge: Option<ProjectionMlp>,
    text_image: BranchParams,
    knowledge: Option<KnowledgeParams>,
    fusion: FusionParams,
    patch_graph: ModalityGraph,
}

#[derive(Clone, Debug)]
pub struct Model<S> {
    config: Config,
    dims: DatasetHeader,
    store: ParamStore<S>,
    parts: Parts,
}

/// Tape handles for everything one forward pass produced.
#[derive(Clone, Debug)]
pub struct Trace {
    pub text: Var,
    pub image: Var,
    pub knowledge: Option<Var>,
    pub text_image: BranchTrace,
    pub text_knowledge: Option<BranchTrace>,
    pub patch_weights: Var,
    pub knowledge_weights: Option<Var>,
    pub classifier_input: Var,
    pub probs: Var,
}

impl Trace {
    /// Every softmax-normalized row produced in the pass.
    pub fn distributions(&self) -> Vec<Var> {
        let mut out = self.text_image.distributions();
        if let Some(k) = &self.text_knowledge {
            out.extend(k.distributions());
        }
        out.push(self.patch_weights);
        out.extend(self.knowledge_weights);
        out.push(self.probs);
        out
    }
}

/// Per-sample congruity scores, importances and class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct CongruityBundle<S> {
    pub s_a: Option<Vec<S>>,
    pub s_p: Option<Vec<S>>,
    pub s_a_k: Option<Vec<S>>,
    pub s_p_k: Option<Vec<S>>,
    pub p_v: Vec<S>,
    pub p_k: Option<Vec<S>>,
    /// `[P(not sarcastic), P(sarcastic)]`
    pub probs: [S; 2],
}

impl<S: Scalar> CongruityBundle<S> {
    pub fn predicted_label(&self) -> u8 {
        u8::from(self.probs[1] > self.probs[0])
    }
}

impl<S: Scalar> Model<S> {
    pub fn new(config: Config, dims: DatasetHeader) -> Result<Self> {
        config.validate()?;
        if config.knowledge_enabled && dims.d_know == 0 {
            return Err(Error::Config(
                "knowledge branch enabled but the data has no knowledge width".into(),
            ));
        }
        let (d, seed) = (config.d, config.seed);
        let mut store = ParamStore::new();
        let proj_text = ProjectionMlp::register(&mut store, "proj.text", dims.d_text, d, d, seed);
        let proj_image = ProjectionMlp::register(&mut store, "proj.image", dims.d_img, d, d, seed);
        let proj_knowledge = config
            .knowledge_enabled
            .then(|| ProjectionMlp::register(&mut store, "proj.knowledge", dims.d_know, d, d, seed));
        let text_image = BranchParams::register(&mut store, "ti", &config, config.mca_layers_text_image)?;
        let knowledge = if config.knowledge_enabled {
            Some(KnowledgeParams::register(&mut store, &config)?)
        } else {
            None
        };
        let fusion = FusionParams::register(&mut store, &config, dims.patch_count());
        let patch_graph = build_grid_graph(dims.p, config.grid_connectivity)?;
        Ok(Model {
            config,
            dims,
            store,
            parts: Parts {
                proj_text,
                proj_image,
                proj_knowledge,
                text_image,
                knowledge,
                fusion,
                patch_graph,
            },
        })
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn dims(&self) -> DatasetHeader {
        self.dims
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn classifier_width(&self) -> usize {
        self.parts.fusion.classifier.width
    }

    /// Same architecture and values at another precision.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            store.insert(&p.name, p.tensor.cast());
        }
        Model {
            config: self.config.clone(),
            dims: self.dims,
            store,
            parts: self.parts.clone(),
        }
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        let fail = |detail: String| Err(Error::data(&sample.id, detail));
        if sample.grid_side != self.dims.p {
            return fail(format!(
                "grid side {} but the model expects {}",
                sample.grid_side, self.dims.p
            ));
        }
        if sample.text.cols() != self.dims.d_text || sample.image.cols() != self.dims.d_img {
            return fail("embedding widths differ from the model's input widths".into());
        }
        if self.config.knowledge_enabled {
            let Some(k) = &sample.knowledge else {
                return fail("knowledge branch enabled but the sample has no knowledge".into());
            };
            if k.cols() != self.dims.d_know {
                return fail(format!(
                    "knowledge width {} but the model expects {}",
                    k.cols(),
                    self.dims.d_know
                ));
            }
            if k.rows() > self.config.knowledge_slots() {
                return fail(format!(
                    "{} knowledge tokens exceed the {} classifier slots",
                    k.rows(),
                    self.config.knowledge_slots()
                ));
            }
        }
        Ok(())
    }

    fn dropout(&self, tape: &mut Tape<S>, x: Var, mode: Mode, site: Site, enabled: bool) -> Result<Var> {
        let (training, key) = mode.dropout_key(self.config.seed, site);
        tape.dropout(x, self.config.dropout, training && enabled, key)
    }

    pub fn forward(&self, tape: &mut Tape<S>, sample: &Sample, mode: Mode) -> Result<Trace> {
        self.check_sample(sample)?;
        let store = &self.store;
        let parts = &self.parts;
        let sites = self.config.dropout_sites;

        let text_graph = build_text_graph(&sample.text_edges, sample.text_len())?;
        let raw_text = tape.constant(sample.text.cast());
        let text = project(tape, store, raw_text, &parts.proj_text)?;
        let text = self.dropout(tape, text, mode, Site::DropoutText, sites.projection)?;
        let raw_image = tape.constant(sample.image.cast());
        let image = project(tape, store, raw_image, &parts.proj_image)?;
        let image = self.dropout(tape, image, mode, Site::DropoutImage, sites.projection)?;

        let text_image = parts
            .text_image
            .forward(tape, store, text, image, &text_graph, &parts.patch_graph)?;
        let aligned = text_image.align.updated;

        let (knowledge, text_knowledge) = match (&parts.knowledge, &parts.proj_knowledge) {
            (Some(kp), Some(proj)) => {
                let k_raw = sample.knowledge.as_ref().expect("checked in check_sample");
                let raw = tape.constant(k_raw.cast());
                let k = project(tape, store, raw, proj)?;
                let k = self.dropout(tape, k, mode, Site::DropoutKnowledge, sites.projection)?;
                let edges = sample.knowledge_edges.as_deref().unwrap_or(&[]);
                let know_graph = build_text_graph(edges, k_raw.rows())?;
                let align = knowledge_atomic(tape, store, aligned, k, kp)?;
                let compose =
                    knowledge_composition(tape, store, aligned, align.updated, k, &text_graph, &know_graph, kp)?;
                (Some(k), Some(BranchTrace { align, compose }))
            }
            _ => (None, None),
        };

        let fusion = &parts.fusion;
        let patch_weights = patch_importance(tape, store, image, &fusion.patch)?;
        let image_scores: Vec<Var> = [text_image.atomic_score(), text_image.composition_score()]
            .into_iter()
            .flatten()
            .collect();
        let mut knowledge_weights = None;
        let knowledge_part = match (&fusion.knowledge, knowledge, &text_knowledge) {
            (Some(kf), Some(k), Some(tk)) => {
                let w = kf.importance.weights(tape, store, k)?;
                knowledge_weights = Some(w);
                let scores: Vec<Var> = [tk.atomic_score(), tk.composition_score()]
                    .into_iter()
                    .flatten()
                    .collect();
                Some((w, scores, kf.slots))
            }
            _ => None,
        };
        let z = classifier_input(
            tape,
            patch_weights,
            &image_scores,
            knowledge_part.as_ref().map(|(w, s, slots)| (*w, s.as_slice(), *slots)),
        )?;
        let z = self.dropout(tape, z, mode, Site::DropoutClassifier, sites.classifier)?;
        let probs = classify(tape, store, z, &fusion.classifier)?;

        Ok(Trace {
            text,
            image,
            knowledge,
            text_image,
            text_knowledge,
            patch_weights,
            knowledge_weights,
            classifier_input: z,
            probs,
        })
    }

    /// Records a forward pass plus the cross-entropy loss for `sample.label`.
    pub fn forward_loss(&self, tape: &mut Tape<S>, sample: &Sample, mode: Mode) -> Result<(Trace, Var)> {
        let trace = self.forward(tape, sample, mode)?;
        let loss = cross_entropy(tape, trace.probs, sample.label)?;
        Ok((trace, loss))
    }

    pub fn sample_loss(&self, sample: &Sample, mode: Mode) -> Result<S> {
        let mut tape = Tape::new();
        let (_, loss) = self.forward_loss(&mut tape, sample, mode)?;
        Ok(tape.item(loss))
    }

    /// Adds `scale · ∂loss/∂θ` for one sample into the parameter gradients; returns the loss.
    pub fn accumulate_gradients(&mut self, sample: &Sample, mode: Mode, scale: S) -> Result<S> {
        let mut tape = Tape::new();
        let (_, loss) = self.forward_loss(&mut tape, sample, mode)?;
        tape.backward_into(loss, &mut self.store, scale)?;
        Ok(tape.item(loss))
    }

    pub fn bundle(&self, tape: &Tape<S>, trace: &Trace) -> CongruityBundle<S> {
        let vals = |v: Var| tape.value(v).data().to_vec();
        let probs = tape.value(trace.probs).data();
        let tk = trace.text_knowledge.as_ref();
        CongruityBundle {
            s_a: trace.text_image.atomic_score().map(vals),
            s_p: trace.text_image.composition_score().map(vals),
            s_a_k: tk.and_then(BranchTrace::atomic_score).map(vals),
            s_p_k: tk.and_then(BranchTrace::composition_score).map(vals),
            p_v: vals(trace.patch_weights),
            p_k: trace.knowledge_weights.map(vals),
            probs: [probs[0], probs[1]],
        }
    }

    /// Deterministic inference (dropout off).
    pub fn predict(&self, sample: &Sample) -> Result<CongruityBundle<S>> {
        let mut tape = Tape::new();
        let trace = self.forward(&mut tape, sample, Mode::Eval)?;
        Ok(self.bundle(&tape, &trace))
    }
}
