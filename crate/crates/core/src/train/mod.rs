//! Optimizer, training loop, metrics, gradient checks and export.

mod eval;
mod export;
mod metrics;
mod optim;
mod trainer;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use eval::{confusions, evaluate, predict, Decision};
pub use export::{export_representations, sidecar_path, ExportManifest, ExportRow};
pub use metrics::{report, Confusion, FacetMetrics, MetricsReport};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{train, train_with, EpochLog, TrainConfig, TrainOutcome};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, GradCheckConfig, GradCheckReport};
use crate::data::{expand_items, resolve_batch, synth_generate, EmbeddingStore, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::labels::Subtask;
use crate::model::{Batch, Model, ModelConfig, ModelParams};
use crate::schema::{build_tree, init_node_states, ConceptTree, SchemaSpec};

/// Samples with the facet order and embeddings they are read against.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub samples: &'a [Sample],
    pub codes: &'a [String],
    pub store: &'a EmbeddingStore,
}

/// Concept tree with states taken from the store's concept records.
pub fn concept_tree(schema: &SchemaSpec, store: &EmbeddingStore) -> Result<ConceptTree> {
    init_node_states(build_tree(schema, store.dim())?, store)
}

/// Analytic gradient of the model loss on `batch` against central
/// differences, grouped by tensor kind.
pub fn check_gradients(model: &Model, batch: &Batch<'_>, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(batch)?;
    let x = model.params.flatten();
    finite_diff_check(
        |p| model.loss_at(p, batch),
        &x,
        &analytic,
        &model.params.groups(),
        cfg,
    )
}

/// Gradient check of a freshly initialized model on a random batch of
/// `batch` items drawn from small synthetic data of width `dim`.
pub fn synthetic_gradcheck(
    schema: &SchemaSpec,
    config: ModelConfig,
    dim: usize,
    batch: usize,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let data = synth_generate(schema, &SynthConfig::new(1, dim, 0.2, cfg.seed))?;
    let codes = schema.facet_codes();
    let tree = concept_tree(schema, &data.store)?;
    let subtask: Subtask = config.subtask;
    let model = Model::new(config, tree, cfg.seed)?;
    let mut items = expand_items(&data.samples, &codes, subtask);
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    items.truncate(batch.max(1));
    let b = resolve_batch(&items, &data.samples, &codes, &data.store)?;
    check_gradients(&model, &b, cfg)
}

/// Trained parameters with the configuration they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            config: model.config.clone(),
            params: model.params.clone(),
        }
    }

    pub fn into_model(self, tree: ConceptTree) -> Result<Model> {
        Model::with_params(self.config, tree, self.params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
