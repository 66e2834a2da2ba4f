//! Samples, the on-disk dataset format and batching.

mod batch;
mod format;
mod sample;

pub use batch::{batch_indices, make_batch, Batch};
pub use format::{
    blob_path, load_dataset, load_manifest, manifest_path, write_dataset, write_manifest, Dataset, DatasetHeader,
    BLOB_MAGIC, FORMAT_VERSION,
};
pub use sample::{Limits, Sample};
