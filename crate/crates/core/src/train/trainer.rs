use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::metrics::MetricsReport;
use super::optim::{AdamW, AdamWConfig};
use super::Dataset;
use crate::data::{batch_iter, resolve_batch, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    /// Seeds batch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: DEFAULT_BATCH_SIZE,
            optim: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.optim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_micro_f1: Option<f64>,
    pub val_micro_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch, or of the last epoch
    /// without validation data.
    pub best: Model,
    pub best_epoch: Option<usize>,
    pub best_val: Option<MetricsReport>,
    /// Parameters after the last step.
    pub last: Model,
    pub logs: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.logs.last().map(|l| l.train_loss)
    }
}

pub fn train(model: Model, data: &Dataset<'_>, val: Option<&Dataset<'_>>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, val, cfg, |_| {})
}

/// Fixed-epoch AdamW training, keeping the parameters with the best
/// validation Micro-F1. `on_epoch` sees each log as it is produced.
pub fn train_with(
    mut model: Model,
    data: &Dataset<'_>,
    val: Option<&Dataset<'_>>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let batcher = batch_iter(
        data.samples,
        data.codes,
        data.store,
        model.config.subtask,
        cfg.batch_size,
        cfg.seed,
    )?;
    if batcher.items().is_empty() {
        return Err(Error::Data("training set has no items for this subtask".into()));
    }
    let mut flat = model.params.flatten();
    let mut opt = AdamW::new(cfg.optim, flat.len());
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, MetricsReport, Model)> = None;

    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        let batches = batcher.epoch(epoch as u64);
        for items in &batches {
            let batch = resolve_batch(items, data.samples, data.codes, data.store)?;
            let step = opt.steps() + 1;
            let (loss, grads) = model.loss_and_grad(&batch).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, step {step}: {m}")),
                other => other,
            })?;
            opt.step(&mut flat, &grads)?;
            model.params.set_flat(&flat)?;
            sum += loss.total;
        }
        let report = val.map(|v| evaluate(&model, v)).transpose()?;
        let log = EpochLog {
            epoch,
            steps: opt.steps(),
            train_loss: sum / batches.len() as f64,
            val_micro_f1: report.as_ref().map(|r| r.micro_f1),
            val_micro_acc: report.as_ref().map(|r| r.micro_acc),
        };
        on_epoch(&log);
        logs.push(log);
        if let Some(r) = report {
            if best.as_ref().is_none_or(|(_, b, _)| r.micro_f1 > b.micro_f1) {
                best = Some((epoch, r, model.clone()));
            }
        }
    }

    Ok(match best {
        Some((epoch, report, best)) => TrainOutcome {
            best,
            best_epoch: Some(epoch),
            best_val: Some(report),
            last: model,
            logs,
        },
        None => TrainOutcome {
            best: model.clone(),
            best_epoch: None,
            best_val: None,
            last: model,
            logs,
        },
    })
}
