//! Model and training configuration, with a `key=value` text form shared by
//! config files, checkpoints and command-line flags.

use std::fmt::{self, Display};
use std::path::Path;
use std::str::FromStr;

use crate::adam::AdamConfig;
use crate::data::Limits;
use crate::error::{Error, Result};
use crate::graph::Connectivity;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    Full,
    /// Drop the atomic score from the classifier.
    NoAtomic,
    /// Drop the atomic score and every cross-attention stack; raw text replaces aligned text.
    NoMcaNoAtomic,
    /// Drop the composition score and the graph layers.
    NoComposition,
}

impl Ablation {
    pub fn uses_mca(self) -> bool {
        self != Ablation::NoMcaNoAtomic
    }

    pub fn uses_atomic(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoComposition)
    }

    pub fn uses_composition(self) -> bool {
        self != Ablation::NoComposition
    }

    /// Congruity scores per modality pair fed to the classifier.
    pub fn score_count(self) -> usize {
        usize::from(self.uses_atomic()) + usize::from(self.uses_composition())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SentenceMode {
    /// Importance-weighted sum of aligned token features.
    #[default]
    Weighted,
    /// Plain average of aligned token features.
    Uniform,
}

/// Which features score token importance for the weighted sentence embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SentenceWeights {
    /// Features entering the branch's cross attention (raw `T` for text-image).
    #[default]
    Input,
    /// Features leaving the cross attention.
    Updated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutSites {
    pub projection: bool,
    pub classifier: bool,
}

impl Default for DropoutSites {
    fn default() -> Self {
        DropoutSites {
            projection: true,
            classifier: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub d: usize,
    pub heads: usize,
    pub mca_layers_text_image: usize,
    pub mca_layers_text_knowledge: usize,
    pub gat_layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub dropout_sites: DropoutSites,
    pub max_text_len: usize,
    pub max_knowledge_len: usize,
    pub grid_connectivity: Connectivity,
    pub sentence_mode: SentenceMode,
    pub sentence_weights: SentenceWeights,
    pub ablation: Ablation,
    pub knowledge_enabled: bool,
    pub seed: u64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub leaky_relu_slope: f64,
    pub layer_norm_eps: f64,
    pub gat_activation: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d: 200,
            heads: 5,
            mca_layers_text_image: 6,
            mca_layers_text_knowledge: 3,
            gat_layers: 2,
            batch_size: 32,
            lr: 2e-5,
            weight_decay: 5e-3,
            dropout: 0.5,
            dropout_sites: DropoutSites::default(),
            max_text_len: 100,
            max_knowledge_len: 20,
            grid_connectivity: Connectivity::Four,
            sentence_mode: SentenceMode::Weighted,
            sentence_weights: SentenceWeights::Input,
            ablation: Ablation::Full,
            knowledge_enabled: false,
            seed: 0,
            early_stop_patience: 5,
            max_epochs: 100,
            leaky_relu_slope: 0.2,
            layer_norm_eps: 1e-5,
            gat_activation: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// Every settable key, in canonical (kebab-case) spelling.
pub const CONFIG_KEYS: &[&str] = &[
    "d",
    "h",
    "mca-layers-text-image",
    "mca-layers-text-knowledge",
    "gat-layers",
    "batch-size",
    "lr",
    "weight-decay",
    "dropout",
    "dropout-sites",
    "max-text-len",
    "max-knowledge-len",
    "grid-connectivity",
    "sentence-mode",
    "sentence-weights",
    "ablation",
    "knowledge-enabled",
    "seed",
    "early-stop-patience",
    "max-epochs",
    "leaky-relu-slope",
    "layer-norm-eps",
    "gat-activation",
    "adam-beta1",
    "adam-beta2",
    "adam-eps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl Config {
    /// Sets one field from its textual form. Keys accept kebab- or snake-case.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "d" => self.d = parse(&key, v)?,
            "h" | "heads" => self.heads = parse(&key, v)?,
            "mca-layers-text-image" => self.mca_layers_text_image = parse(&key, v)?,
            "mca-layers-text-knowledge" => self.mca_layers_text_knowledge = parse(&key, v)?,
            "gat-layers" => self.gat_layers = parse(&key, v)?,
            "batch-size" => self.batch_size = parse(&key, v)?,
            "lr" => self.lr = parse(&key, v)?,
            "weight-decay" => self.weight_decay = parse(&key, v)?,
            "dropout" => self.dropout = parse(&key, v)?,
            "dropout-sites" => {
                let mut sites = DropoutSites {
                    projection: false,
                    classifier: false,
                };
                for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    match part {
                        "projection" => sites.projection = true,
                        "classifier" => sites.classifier = true,
                        "none" => {}
                        other => return Err(Error::Config(format!("unknown dropout site `{other}`"))),
                    }
                }
                self.dropout_sites = sites;
            }
            "max-text-len" => self.max_text_len = parse(&key, v)?,
            "max-knowledge-len" => self.max_knowledge_len = parse(&key, v)?,
            "grid-connectivity" => self.grid_connectivity = Connectivity::from_count(parse(&key, v)?)?,
            "sentence-mode" => {
                self.sentence_mode = match v {
                    "weighted" => SentenceMode::Weighted,
                    "uniform" => SentenceMode::Uniform,
                    other => return Err(Error::Config(format!("unknown sentence mode `{other}`"))),
                }
            }
            "sentence-weights" => {
                self.sentence_weights = match v {
                    "input" => SentenceWeights::Input,
                    "updated" => SentenceWeights::Updated,
                    other => return Err(Error::Config(format!("unknown sentence weight source `{other}`"))),
                }
            }
            "ablation" => self.ablation = v.parse()?,
            "knowledge-enabled" | "knowledge" => self.knowledge_enabled = parse_bool(&key, v)?,
            "seed" => self.seed = parse(&key, v)?,
            "early-stop-patience" | "patience" => self.early_stop_patience = parse(&key, v)?,
            "max-epochs" => self.max_epochs = parse(&key, v)?,
            "leaky-relu-slope" => self.leaky_relu_slope = parse(&key, v)?,
            "layer-norm-eps" => self.layer_norm_eps = parse(&key, v)?,
            "gat-activation" => self.gat_activation = parse_bool(&key, v)?,
            "adam-beta1" => self.adam_beta1 = parse(&key, v)?,
            "adam-beta2" => self.adam_beta2 = parse(&key, v)?,
            "adam-eps" => self.adam_eps = parse(&key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Returns the value of a key in the same textual form `set` accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = match key.replace('_', "-").as_str() {
            "d" => self.d.to_string(),
            "h" | "heads" => self.heads.to_string(),
            "mca-layers-text-image" => self.mca_layers_text_image.to_string(),
            "mca-layers-text-knowledge" => self.mca_layers_text_knowledge.to_string(),
            "gat-layers" => self.gat_layers.to_string(),
            "batch-size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "weight-decay" => self.weight_decay.to_string(),
            "dropout" => self.dropout.to_string(),
            "dropout-sites" => {
                let mut parts = Vec::new();
                if self.dropout_sites.projection {
                    parts.push("projection");
                }
                if self.dropout_sites.classifier {
                    parts.push("classifier");
                }
                if parts.is_empty() {
                    "none".into()
                } else {
                    parts.join(",")
                }
            }
            "max-text-len" => self.max_text_len.to_string(),
            "max-knowledge-len" => self.max_knowledge_len.to_string(),
            "grid-connectivity" => self.grid_connectivity.count().to_string(),
            "sentence-mode" => match self.sentence_mode {
                SentenceMode::Weighted => "weighted".into(),
                SentenceMode::Uniform => "uniform".into(),
            },
            "sentence-weights" => match self.sentence_weights {
                SentenceWeights::Input => "input".into(),
                SentenceWeights::Updated => "updated".into(),
            },
            "ablation" => self.ablation.to_string(),
            "knowledge-enabled" | "knowledge" => self.knowledge_enabled.to_string(),
            "seed" => self.seed.to_string(),
            "early-stop-patience" | "patience" => self.early_stop_patience.to_string(),
            "max-epochs" => self.max_epochs.to_string(),
            "leaky-relu-slope" => self.leaky_relu_slope.to_string(),
            "layer-norm-eps" => self.layer_norm_eps.to_string(),
            "gat-activation" => self.gat_activation.to_string(),
            "adam-beta1" => self.adam_beta1.to_string(),
            "adam-beta2" => self.adam_beta2.to_string(),
            "adam-eps" => self.adam_eps.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key=value` lines; blank lines and `#` comments are ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Config::default();
        c.apply_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    /// Canonical `key=value` rendering of every field; `from_kv` inverts it exactly.
    pub fn to_kv(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("canonical key")))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("head count {} must divide d = {}", self.heads, self.d));
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if !(self.leaky_relu_slope > 0.0 && self.leaky_relu_slope < 1.0) {
            return bad("leaky relu slope must lie in (0,1)".into());
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return bad("layer norm eps must be positive".into());
        }
        if !(0.0..).contains(&self.lr) || !(0.0..).contains(&self.weight_decay) {
            return bad("learning rate and weight decay must be non-negative".into());
        }
        if self.max_text_len == 0 || self.max_knowledge_len == 0 {
            return bad("sequence limits must be positive".into());
        }
        Ok(())
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_text_len: self.max_text_len,
            max_knowledge_len: self.max_knowledge_len,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Knowledge slots reserved in the classifier input.
    pub fn knowledge_slots(&self) -> usize {
        self.max_knowledge_len
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "no_atomic" => Ok(Ablation::NoAtomic),
            "no_mca_no_atomic" => Ok(Ablation::NoMcaNoAtomic),
            "no_composition" => Ok(Ablation::NoComposition),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

impl Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoAtomic => "no_atomic",
            Ablation::NoMcaNoAtomic => "no_mca_no_atomic",
            Ablation::NoComposition => "no_composition",
        })
    }
}
