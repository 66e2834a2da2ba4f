//! Named trainable parameters.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Site};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)) with fan_in = rows, fan_out = cols.
    Xavier,
    Zeros,
    Ones,
    Identity,
}

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub tensor: Tensor<S>,
}

/// Registration-ordered parameter table.
///
/// Initial values depend only on `(seed, name)`, never on registration order,
/// so two models that share a parameter name start from the same value.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, rows: usize, cols: usize, init: Init, seed: u64) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        let mut r = rng::stream(rng::derive(seed, Site::Init, &[rng::name_hash(name)]));
        let data: Vec<S> = match init {
            Init::Xavier => {
                let bound = (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols)
                    .map(|_| S::lit(r.random_range(-bound..bound)))
                    .collect()
            }
            Init::Zeros => vec![S::zero(); rows * cols],
            Init::Ones => vec![S::one(); rows * cols],
            Init::Identity => Tensor::<S>::identity(rows).into_data(),
        };
        debug_assert_eq!(data.len(), rows * cols);
        self.insert(name, Tensor::from_vec_unchecked(rows, cols, data))
    }

    /// Adds a parameter with an explicit value.
    pub fn insert(&mut self, name: &str, tensor: Tensor<S>) -> ParamId {
        let id = ParamId(self.params.len());
        self.index.insert(name.to_owned(), id);
        self.params.push(Param {
            name: name.to_owned(),
            tensor: tensor.with_requires_grad(true),
        });
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.tensor(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Overwrites every parameter (biases and norm scales included) with `N(0, std²)` draws.
    /// Used by gradient checks so no parameter sits at a special value.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        for p in &mut self.params {
            let mut r = rng::stream(rng::derive(seed, Site::Init, &[rng::name_hash(&p.name), 1]));
            let data: Vec<S> = (0..p.tensor.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    S::lit(z * std)
                })
                .collect();
            p.tensor.assign(&data);
        }
    }

    /// Copies values from `other` for every shared name; shapes must agree.
    pub fn load_values(&mut self, other: &[(String, Tensor<f64>)]) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.len()
            )));
        }
        for (name, value) in other {
            let id = self
                .id(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
            let t = self.tensor_mut(id);
            if t.shape() != value.shape() {
                return Err(Error::Contract(format!(
                    "parameter `{name}` has shape {:?}, stored {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            let data: Vec<S> = value.data().iter().map(|&v| S::lit(v)).collect();
            t.assign(&data);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_order() {
        let mut a = ParamStore::<f64>::new();
        a.register("x", 3, 2, Init::Xavier, 9);
        a.register("y", 2, 2, Init::Xavier, 9);
        let mut b = ParamStore::<f64>::new();
        b.register("y", 2, 2, Init::Xavier, 9);
        b.register("x", 3, 2, Init::Xavier, 9);
        assert_eq!(a.get("x").unwrap().data(), b.get("x").unwrap().data());
        assert_eq!(a.get("y").unwrap().data(), b.get("y").unwrap().data());
        assert_eq!(a.scalar_count(), 10);
    }

    #[test]
    fn xavier_respects_bound() {
        let mut s = ParamStore::<f64>::new();
        let id = s.register("w", 10, 6, Init::Xavier, 1);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(s.tensor(id).data().iter().all(|v| v.abs() <= bound));
    }
}
