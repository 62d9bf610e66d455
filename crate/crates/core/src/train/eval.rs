use rayon::prelude::*;

use super::metrics::{report, Confusion, MetricsReport};
use super::Dataset;
use crate::data::{expand_items, pair_key, Item};
use crate::error::Result;
use crate::labels::Subtask;
use crate::model::Model;

/// Gold and predicted class of one (text, facet) decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub sample: usize,
    pub facet: usize,
    pub gold: usize,
    pub pred: usize,
}

/// Every decision the model makes on `data`, in item order. Texts are
/// scored in parallel.
pub fn predict(model: &Model, data: &Dataset<'_>) -> Result<Vec<Decision>> {
    let subtask = model.config.subtask;
    let items = expand_items(data.samples, data.codes, subtask);
    let per_item: Vec<Vec<Decision>> = match subtask {
        Subtask::Relevance => {
            let reps = model.concept_reps()?;
            items
                .par_iter()
                .map(|&item| {
                    let i = item.sample();
                    let s = &data.samples[i];
                    let tokens = data.store.matrix(&s.id)?;
                    let pred = model.predict_relevance(&reps, tokens)?;
                    Ok(s.relevance_labels(data.codes)
                        .into_iter()
                        .zip(pred)
                        .enumerate()
                        .map(|(f, (g, p))| Decision {
                            sample: i,
                            facet: f,
                            gold: g.class(),
                            pred: p.class(),
                        })
                        .collect())
                })
                .collect::<Result<_>>()?
        }
        Subtask::Ideology => items
            .par_iter()
            .map(|&item| {
                let Item::Pair { sample, facet } = item else {
                    unreachable!("ideology items are pairs")
                };
                let s = &data.samples[sample];
                let code = &data.codes[facet];
                let text = data.store.vector(&pair_key(&s.id, code))?;
                let pred = model.predict_ideology(text, facet)?;
                Ok(vec![Decision {
                    sample,
                    facet,
                    gold: s.ideology[code].class(),
                    pred: pred.class(),
                }])
            })
            .collect::<Result<_>>()?,
    };
    Ok(per_item.into_iter().flatten().collect())
}

pub fn confusions(subtask: Subtask, facets: usize, decisions: &[Decision]) -> Vec<Confusion> {
    let mut out = vec![Confusion::new(subtask.num_classes()); facets];
    for d in decisions {
        out[d.facet].add(d.gold, d.pred);
    }
    out
}

pub fn evaluate(model: &Model, data: &Dataset<'_>) -> Result<MetricsReport> {
    let subtask = model.config.subtask;
    let decisions = predict(model, data)?;
    Ok(report(
        subtask,
        data.codes,
        &confusions(subtask, data.codes.len(), &decisions),
    ))
}
