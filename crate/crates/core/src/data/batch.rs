use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::embeddings::EmbeddingStore;
use super::manifest::Sample;
use crate::error::{Error, Result};
use crate::labels::Subtask;
use crate::model::{Batch, IdeologyExample, RelevanceExample};

pub const DEFAULT_BATCH_SIZE: usize = 64;

/// One training unit: a whole text for relevance, a (text, related facet)
/// pair for ideology. Indices point into the sample slice and the facet
/// code list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Item {
    Text(usize),
    Pair { sample: usize, facet: usize },
}

impl Item {
    pub fn sample(self) -> usize {
        match self {
            Item::Text(s) | Item::Pair { sample: s, .. } => s,
        }
    }
}

pub fn pair_key(id: &str, code: &str) -> String {
    format!("{id}@{code}")
}

/// Items in input order.
pub fn expand_items(samples: &[Sample], codes: &[String], subtask: Subtask) -> Vec<Item> {
    match subtask {
        Subtask::Relevance => (0..samples.len()).map(Item::Text).collect(),
        Subtask::Ideology => samples
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                s.labeled_facets(codes)
                    .into_iter()
                    .map(move |(f, _)| Item::Pair { sample: i, facet: f })
            })
            .collect(),
    }
}

/// Checks that every item has an embedding of the right shape.
pub fn check_keys(samples: &[Sample], codes: &[String], store: &EmbeddingStore, items: &[Item]) -> Result<()> {
    for &item in items {
        match item {
            Item::Text(i) => {
                store.matrix(&samples[i].id)?;
            }
            Item::Pair { sample, facet } => {
                store.vector(&pair_key(&samples[sample].id, &codes[facet]))?;
            }
        }
    }
    Ok(())
}

/// Seeded epoch-wise batching over a fixed item list.
#[derive(Debug, Clone)]
pub struct Batcher {
    items: Vec<Item>,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn num_batches(&self) -> usize {
        self.items.len().div_ceil(self.batch_size)
    }

    /// Batches of one epoch: a fresh shuffle per epoch, last batch may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<Item>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut items = self.items.clone();
        items.shuffle(&mut rng);
        items.chunks(self.batch_size).map(<[Item]>::to_vec).collect()
    }
}

pub fn batch_iter(
    samples: &[Sample],
    codes: &[String],
    store: &EmbeddingStore,
    subtask: Subtask,
    batch_size: usize,
    seed: u64,
) -> Result<Batcher> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let items = expand_items(samples, codes, subtask);
    check_keys(samples, codes, store, &items)?;
    Ok(Batcher {
        items,
        batch_size,
        seed,
    })
}

/// Looks up embeddings and labels for a list of items of one subtask.
pub fn resolve_batch<'a>(
    items: &[Item],
    samples: &[Sample],
    codes: &[String],
    store: &'a EmbeddingStore,
) -> Result<Batch<'a>> {
    match items.first() {
        None => Err(Error::Data("empty batch".into())),
        Some(Item::Text(_)) => items
            .iter()
            .map(|&it| match it {
                Item::Text(i) => Ok(RelevanceExample {
                    tokens: store.matrix(&samples[i].id)?,
                    labels: samples[i].relevance_labels(codes),
                }),
                Item::Pair { .. } => Err(Error::Data("mixed item kinds in one batch".into())),
            })
            .collect::<Result<Vec<_>>>()
            .map(Batch::Relevance),
        Some(Item::Pair { .. }) => items
            .iter()
            .map(|&it| match it {
                Item::Pair { sample, facet } => {
                    let s = &samples[sample];
                    let label = *s.ideology.get(&codes[facet]).ok_or_else(|| {
                        Error::Data(format!("{}: no ideology label for {}", s.id, codes[facet]))
                    })?;
                    Ok(IdeologyExample {
                        text: store.vector(&pair_key(&s.id, &codes[facet]))?,
                        facet,
                        label,
                    })
                }
                Item::Text(_) => Err(Error::Data("mixed item kinds in one batch".into())),
            })
            .collect::<Result<Vec<_>>>()
            .map(Batch::Ideology),
    }
}
