use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamGroup, Tape, Var};
use crate::bico::{AggParams, EdgePhases};
use crate::error::{Error, Result};

/// Two-layer classifier `W2 tanh(W1 t + b1) + b2` followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetHead {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// `hidden x dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl FacetHead {
    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Self {
        Self {
            dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random<R: Rng>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim, hidden, classes);
        let b1 = (6.0 / (dim + hidden) as f64).sqrt();
        head.w1.iter_mut().for_each(|w| *w = rng.gen_range(-b1..=b1));
        let b2 = (6.0 / (hidden + classes) as f64).sqrt();
        head.w2.iter_mut().for_each(|w| *w = rng.gen_range(-b2..=b2));
        head
    }
}

/// Shared affine map `W x + b` applied to every text and concept vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Adapter {
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self {
            dim,
            w,
            b: vec![0.0; dim],
        }
    }
}

/// Every trainable tensor of one subtask model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dim: usize,
    pub phases: EdgePhases,
    pub agg: AggParams,
    /// One per facet, schema order.
    pub heads: Vec<FacetHead>,
    pub adapter: Option<Adapter>,
}

pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

pub struct AdapterVars {
    pub w: Var,
    pub b: Var,
}

/// Tape leaves for a [`ModelParams`], registered in canonical order.
pub struct ParamVars {
    pub phases: [Var; 3],
    pub attn: [Var; 3],
    pub heads: Vec<HeadVars>,
    pub adapter: Option<AdapterVars>,
    order: Vec<Var>,
}

impl ParamVars {
    /// Gradients laid out like [`ModelParams::flatten`].
    pub fn flat_grads(&self, grads: &Gradients) -> Vec<f64> {
        self.order.iter().flat_map(|&v| grads.wrt(v)).collect()
    }
}

impl ModelParams {
    pub fn init<R: Rng>(
        dim: usize,
        facets: usize,
        hidden: usize,
        classes: usize,
        adapter: bool,
        rng: &mut R,
    ) -> Self {
        let phases = EdgePhases::random(dim, rng);
        let agg = AggParams::random(dim, rng);
        let heads = (0..facets)
            .map(|_| FacetHead::random(dim, hidden, classes, rng))
            .collect();
        Self {
            dim,
            phases,
            agg,
            heads,
            adapter: adapter.then(|| Adapter::identity(dim)),
        }
    }

    // Canonical order: grouped by tensor kind so each kind is one contiguous
    // range of the flat vector.
    fn tensors(&self) -> Vec<(&'static str, &Vec<f64>)> {
        let mut out: Vec<(&'static str, &Vec<f64>)> = Vec::new();
        out.extend(self.phases.theta.iter().map(|t| ("phases", t)));
        out.extend(self.agg.attn.iter().map(|a| ("attention", a)));
        if let Some(a) = &self.adapter {
            out.push(("adapter.w", &a.w));
            out.push(("adapter.b", &a.b));
        }
        out.extend(self.heads.iter().map(|h| ("heads.w1", &h.w1)));
        out.extend(self.heads.iter().map(|h| ("heads.b1", &h.b1)));
        out.extend(self.heads.iter().map(|h| ("heads.w2", &h.w2)));
        out.extend(self.heads.iter().map(|h| ("heads.b2", &h.b2)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.extend(self.phases.theta.iter_mut());
        out.extend(self.agg.attn.iter_mut());
        if let Some(a) = &mut self.adapter {
            out.push(&mut a.w);
            out.push(&mut a.b);
        }
        let mut w1 = Vec::new();
        let mut b1 = Vec::new();
        let mut w2 = Vec::new();
        let mut b2 = Vec::new();
        for h in &mut self.heads {
            w1.push(&mut h.w1);
            b1.push(&mut h.b1);
            w2.push(&mut h.w2);
            b2.push(&mut h.b2);
        }
        out.extend(w1);
        out.extend(b1);
        out.extend(w2);
        out.extend(b2);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, t)| t.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "set_flat",
                format!("{} values for {} parameters", flat.len(), self.num_params()),
            ));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Contiguous ranges of the flat vector, one per tensor kind.
    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut groups: Vec<ParamGroup> = Vec::new();
        let mut off = 0;
        for (name, t) in self.tensors() {
            match groups.last_mut() {
                Some(g) if g.name == name => g.range.end += t.len(),
                _ => groups.push(ParamGroup {
                    name: name.to_string(),
                    range: off..off + t.len(),
                }),
            }
            off += t.len();
        }
        groups
    }

    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let mut order = Vec::new();
        let mut leaf = |tape: &mut Tape, v: &Vec<f64>| {
            let var = tape.param(v.clone());
            order.push(var);
            var
        };
        let phases = [0, 1, 2].map(|l| leaf(tape, &self.phases.theta[l]));
        let attn = [0, 1, 2].map(|l| leaf(tape, &self.agg.attn[l]));
        let adapter = self.adapter.as_ref().map(|a| AdapterVars {
            w: leaf(tape, &a.w),
            b: leaf(tape, &a.b),
        });
        let w1: Vec<Var> = self.heads.iter().map(|h| leaf(tape, &h.w1)).collect();
        let b1: Vec<Var> = self.heads.iter().map(|h| leaf(tape, &h.b1)).collect();
        let w2: Vec<Var> = self.heads.iter().map(|h| leaf(tape, &h.w2)).collect();
        let b2: Vec<Var> = self.heads.iter().map(|h| leaf(tape, &h.b2)).collect();
        let heads = (0..self.heads.len())
            .map(|i| HeadVars {
                w1: w1[i],
                b1: b1[i],
                w2: w2[i],
                b2: b2[i],
            })
            .collect();
        ParamVars {
            phases,
            attn,
            heads,
            adapter,
            order,
        }
    }
}
