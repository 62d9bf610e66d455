use serde::{Deserialize, Serialize};

use crate::labels::Subtask;

/// Square count matrix, `counts[gold * k + pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    k: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold * self.k + pred] += 1;
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k + pred]
    }

    pub fn merge(&mut self, other: &Confusion) {
        assert_eq!(self.k, other.k, "confusion sizes differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|c| self.count(c, c)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }

    fn gold_total(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.count(c, p)).sum()
    }

    fn pred_total(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.count(g, c)).sum()
    }

    /// One-vs-rest F1 of class `c`; 1 when the class never occurs in gold or
    /// predictions.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.count(c, c);
        let fp = self.pred_total(c) - tp;
        let fn_ = self.gold_total(c) - tp;
        if tp + fp + fn_ == 0 {
            return 1.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }

    /// Mean F1 over the classes that appear in gold or predictions.
    pub fn macro_f1(&self) -> Option<f64> {
        let present: Vec<usize> = (0..self.k)
            .filter(|&c| self.gold_total(c) + self.pred_total(c) > 0)
            .collect();
        if present.is_empty() {
            return None;
        }
        Some(present.iter().map(|&c| self.f1(c)).sum::<f64>() / present.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetMetrics {
    pub code: String,
    pub support: u64,
    pub f1: Option<f64>,
    pub acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subtask: Subtask,
    pub facets: Vec<FacetMetrics>,
    pub macro_f1: f64,
    pub macro_acc: f64,
    pub micro_f1: f64,
    pub micro_acc: f64,
    pub predictions: u64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Relevance scores the Related class; ideology averages F1 over the
/// classes present. Facets without predictions are absent from the macro
/// means; micro values come from the pooled confusion.
pub fn report(subtask: Subtask, codes: &[String], per_facet: &[Confusion]) -> MetricsReport {
    let k = subtask.num_classes();
    let score = |c: &Confusion| -> Option<f64> {
        if c.total() == 0 {
            return None;
        }
        match subtask {
            Subtask::Relevance => Some(c.f1(crate::labels::Relevance::Related.class())),
            Subtask::Ideology => c.macro_f1(),
        }
    };
    let facets: Vec<FacetMetrics> = codes
        .iter()
        .zip(per_facet)
        .map(|(code, c)| FacetMetrics {
            code: code.clone(),
            support: c.total(),
            f1: score(c),
            acc: c.accuracy(),
        })
        .collect();
    let mut pooled = Confusion::new(k);
    per_facet.iter().for_each(|c| pooled.merge(c));
    MetricsReport {
        subtask,
        macro_f1: mean(facets.iter().filter_map(|f| f.f1)),
        macro_acc: mean(facets.iter().filter_map(|f| f.acc)),
        micro_f1: score(&pooled).unwrap_or(0.0),
        micro_acc: pooled.accuracy().unwrap_or(0.0),
        predictions: pooled.total(),
        facets,
    }
}
