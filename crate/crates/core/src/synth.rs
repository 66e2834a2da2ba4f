//! Synthetic datasets that are separable by construction at the congruity level.
//!
//! Each sample draws a latent direction `u`. Tokens sit around `u`. Patches sit
//! around `u` for congruent samples (label 0) and around `−u` for incongruent
//! ones (label 1). Knowledge tokens copy the image latent `±u` with their own,
//! usually smaller, noise. All values are stored at 32-bit precision so the
//! file round trip is exact.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, DatasetHeader, Sample};
use crate::error::{Error, Result};
use crate::rng::{self, Site, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    /// Inclusive range of token counts.
    pub n_range: (usize, usize),
    /// Grid side; each image has `p²` patches.
    pub p: usize,
    /// Inclusive range of knowledge lengths; `None` generates no knowledge.
    pub m_range: Option<(usize, usize)>,
    pub d_raw: usize,
    pub seed: u64,
    pub text_noise: f64,
    pub image_noise: f64,
    pub knowledge_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            count: 256,
            n_range: (4, 10),
            p: 4,
            m_range: Some((2, 6)),
            d_raw: 16,
            seed: 7,
            text_noise: 0.5,
            image_noise: 0.5,
            knowledge_noise: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.n_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid token range {lo}..={hi}")));
        }
        if let Some((lo, hi)) = self.m_range {
            if lo == 0 || lo > hi {
                return Err(Error::Config(format!("invalid knowledge range {lo}..={hi}")));
            }
        }
        if self.p == 0 || self.d_raw == 0 {
            return Err(Error::Config("grid side and embedding width must be positive".into()));
        }
        if [self.text_noise, self.image_noise, self.knowledge_noise]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("noise levels must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn gauss(r: &mut Stream) -> f64 {
    StandardNormal.sample(r)
}

/// `rows` copies of `center` with isotropic noise, rounded to f32.
fn around(r: &mut Stream, center: &[f64], rows: usize, noise: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows)
        .flat_map(|_| center.to_vec())
        .map(|c| (c + noise * gauss(r)) as f32 as f64)
        .collect();
    Tensor::from_vec(rows, center.len(), data).expect("finite by construction")
}

/// Chain edges plus roughly `len/2` extra random dependencies.
fn dependency_edges(r: &mut Stream, len: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (1..len).map(|i| (i - 1, i)).collect();
    if len > 2 {
        for _ in 0..len / 2 {
            let a = r.random_range(0..len);
            let b = r.random_range(0..len);
            if a != b {
                edges.push((a, b));
            }
        }
    }
    edges
}

pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut r = rng::stream(rng::derive(spec.seed, Site::Synthetic, &[]));
    let d = spec.d_raw;
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let label: u8 = u8::from(r.random_bool(0.5));
        let u: Vec<f64> = (0..d).map(|_| gauss(&mut r)).collect();
        let sign = if label == 1 { -1.0 } else { 1.0 };
        let image_latent: Vec<f64> = u.iter().map(|v| sign * v).collect();
        let n = r.random_range(spec.n_range.0..=spec.n_range.1);
        let text = around(&mut r, &u, n, spec.text_noise);
        let image = around(&mut r, &image_latent, spec.p * spec.p, spec.image_noise);
        let text_edges = dependency_edges(&mut r, n);
        let (knowledge, knowledge_edges) = match spec.m_range {
            Some((lo, hi)) => {
                let m = r.random_range(lo..=hi);
                let k = around(&mut r, &image_latent, m, spec.knowledge_noise);
                (Some(k), Some((1..m).map(|j| (j - 1, j)).collect()))
            }
            None => (None, None),
        };
        samples.push(Sample {
            id: format!("synth-{i:05}"),
            label,
            text,
            image,
            knowledge,
            text_edges,
            knowledge_edges,
            grid_side: spec.p,
        });
    }
    Ok(Dataset {
        header: DatasetHeader {
            d_text: d,
            d_img: d,
            d_know: if spec.m_range.is_some() { d } else { 0 },
            p: spec.p,
        },
        samples,
    })
}
