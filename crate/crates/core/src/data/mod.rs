//! Manifests, embedding files, splits, batching and synthetic data.

mod batch;
mod embeddings;
mod manifest;
mod split;
mod synth;

pub use batch::{
    batch_iter, check_keys, expand_items, pair_key, resolve_batch, Batcher, Item, DEFAULT_BATCH_SIZE,
};
pub use embeddings::{read_embeddings, write_embeddings, EmbeddingStore, MAGIC};
pub use manifest::{parse_manifest, read_manifest, write_manifest, Sample};
pub use split::{split_dataset, Split, SplitIds, SplitMode};
pub use synth::{synth_generate, SynthConfig, SynthData};
