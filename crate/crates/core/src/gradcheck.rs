//! Central finite-difference check of the analytic gradient over every parameter.

use rand_distr::{Distribution, StandardNormal};

use crate::config::Config;
use crate::data::{DatasetHeader, Sample};
use crate::error::Result;
use crate::model::{Mode, Model};
use crate::rng::{self, Site};
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSpec {
    pub n: usize,
    /// Grid side; `p²` patches.
    pub p: usize,
    /// Knowledge length, used when the config enables the knowledge branch.
    pub m: usize,
    pub d_raw: usize,
    pub seed: u64,
    pub eps: f64,
    /// Standard deviation of the random parameter values.
    pub param_std: f64,
}

impl Default for GradcheckSpec {
    fn default() -> Self {
        GradcheckSpec {
            n: 4,
            p: 2,
            m: 3,
            d_raw: 6,
            seed: 0,
            eps: 1e-5,
            param_std: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic and numeric gradients of the dropout-off loss on `sample`.
pub fn check_model(model: &mut Model<f64>, sample: &Sample, eps: f64) -> Result<GradcheckReport> {
    model.store_mut().zero_grad();
    model.accumulate_gradients(sample, Mode::Eval, 1.0)?;
    let ids: Vec<_> = model.store().iter().map(|(id, _)| id).collect();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in ids {
        let analytic = model.store().tensor(id).grad().expect("populated above").to_vec();
        let original = model.store().tensor(id).data().to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let mut probe = original.clone();
            probe[k] = original[k] + eps;
            model.store_mut().tensor_mut(id).assign(&probe);
            let plus = model.sample_loss(sample, Mode::Eval)?;
            probe[k] = original[k] - eps;
            model.store_mut().tensor_mut(id).assign(&probe);
            let minus = model.sample_loss(sample, Mode::Eval)?;
            model.store_mut().tensor_mut(id).assign(&original);
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(a, numeric);
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((model.store().name(id).to_string(), k));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn gaussian(seed: u64, which: u64, rows: usize, cols: usize) -> Tensor<f64> {
    let mut r = rng::stream(rng::derive(seed, Site::Synthetic, &[which]));
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::from_vec(rows, cols, data).expect("finite draws")
}

/// A random sample with chain dependencies plus one long-range edge.
pub fn random_sample(spec: &GradcheckSpec, knowledge: bool, label: u8) -> Sample {
    let chain = |len: usize| -> Vec<(usize, usize)> {
        let mut e: Vec<_> = (1..len).map(|i| (i - 1, i)).collect();
        if len > 2 {
            e.push((0, len - 1));
        }
        e
    };
    Sample {
        id: "gradcheck".into(),
        label,
        text: gaussian(spec.seed, 0, spec.n, spec.d_raw),
        image: gaussian(spec.seed, 1, spec.p * spec.p, spec.d_raw),
        knowledge: knowledge.then(|| gaussian(spec.seed, 2, spec.m, spec.d_raw)),
        text_edges: chain(spec.n),
        knowledge_edges: knowledge.then(|| chain(spec.m)),
        grid_side: spec.p,
    }
}

/// Builds a model for `config`, randomizes every parameter and checks it on a random sample.
pub fn gradcheck(config: &Config, spec: &GradcheckSpec) -> Result<GradcheckReport> {
    let dims = DatasetHeader {
        d_text: spec.d_raw,
        d_img: spec.d_raw,
        d_know: if config.knowledge_enabled { spec.d_raw } else { 0 },
        p: spec.p,
    };
    let mut model = Model::<f64>::new(config.clone(), dims)?;
    model.store_mut().randomize(spec.seed, spec.param_std);
    let sample = random_sample(spec, config.knowledge_enabled, 1);
    check_model(&mut model, &sample, spec.eps)
}
