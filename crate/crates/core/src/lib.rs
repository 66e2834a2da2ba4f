//! Hierarchical cross-modal congruity for multimodal sarcasm detection.
//!
//! Text tokens attend over image patches (and optionally over knowledge
//! tokens) to produce token-level *atomic* congruity, while graph attention
//! over dependency and grid structure yields phrase-level *composition*
//! congruity. Both are importance-weighted and fed to a two-way classifier.
//!
//! Everything is generic over the scalar type; the aliases at the crate root
//! fix it to `f64`.

pub mod adam;
pub mod atomic;
pub mod autodiff;
pub mod branch;
pub mod checkpoint;
pub mod composition;
pub mod config;
pub mod data;
pub mod dump;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod graph;
pub mod knowledge;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, Config};
pub use data::{Dataset, DatasetHeader, Sample};
pub use error::{Error, Result};
pub use metrics::Metrics;
pub use model::{CongruityBundle as Bundle, Mode};
pub use scalar::Scalar;
pub use synth::{gen_synthetic, SynthSpec};
pub use train::{evaluate, train, EpochLog};

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = params::ParamStore<f64>;
pub type Model = model::Model<f64>;
pub type CongruityBundle = model::CongruityBundle<f64>;
