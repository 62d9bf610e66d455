//! Multifaceted ideology detection over frozen text embeddings.
//!
//! A schema of domains, facets and ideology concepts becomes a four-level
//! tree whose states are refined by alternating complex-rotation diffusion
//! and attention aggregation. Facet states then attend over token
//! embeddings for relevance, and ideology states serve as anchors of a
//! contrastive loss.

pub mod autodiff;
pub mod bico;
pub mod data;
pub mod error;
pub mod labels;
pub mod matrix;
pub mod model;
pub mod schema;
pub mod train;

pub use bico::{bico_encode, BicoOutput, ComplexVec, EdgePhases, AggParams, FlowFlags};
pub use data::{EmbeddingStore, Sample};
pub use error::{Error, Result};
pub use labels::{Ideology, Relevance, Subtask};
pub use matrix::Matrix;
pub use model::{Model, ModelConfig, ModelParams};
pub use schema::{build_tree, ConceptTree, SchemaSpec};
pub use train::{evaluate, train, Dataset, MetricsReport, TrainConfig};
