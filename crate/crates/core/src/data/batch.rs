use rand::seq::SliceRandom;

use super::sample::Sample;
use crate::error::{Error, Result};
use crate::rng;

/// A mini-batch: samples are processed one by one (no padding) and the loss is averaged.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub samples: Vec<&'a Sample>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn make_batch<'a>(samples: &'a [Sample], indices: &[usize]) -> Result<Batch<'a>> {
    if indices.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let picked = indices
        .iter()
        .map(|&i| {
            samples
                .get(i)
                .ok_or_else(|| Error::Config(format!("batch index {i} out of range ({})", samples.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { samples: picked })
}

/// Splits `0..count` into consecutive chunks of `batch_size`, optionally after a keyed shuffle.
pub fn batch_indices(count: usize, batch_size: usize, shuffle_key: Option<u64>) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..count).collect();
    if let Some(key) = shuffle_key {
        order.shuffle(&mut rng::stream(key));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
