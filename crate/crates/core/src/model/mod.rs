//! Classification heads, shared adapter, contrastive objectives and the full
//! per-subtask loss graphs.

mod graph;
mod ops;
mod params;

pub use graph::{
    Batch, IdeologyExample, LossBreakdown, Model, ModelConfig, RelevanceExample, DEFAULT_HIDDEN,
};
pub use ops::{
    adapter_apply, adapter_on_tape, attend_on_tape, attentive_match, cgcl_loss, cgcl_on_tape,
    cl_loss, cl_on_tape, classify, cross_entropy_on_tape, head_logits_on_tape, total_loss,
    total_on_tape, Attended, LossConfig,
};
pub use params::{Adapter, AdapterVars, FacetHead, HeadVars, ModelParams, ParamVars};

