//! Task-side math: attentive matching, heads, contrastive losses and the
//! total objective. Each operation has a tape form used in training and a
//! value form for direct evaluation.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::labels::Ideology;
use crate::matrix::Matrix;

use super::params::{Adapter, AdapterVars, FacetHead, HeadVars};

/// Temperature and contrastive weight.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

pub fn adapter_on_tape(tape: &mut Tape, adapter: &AdapterVars, x: Var) -> Result<Var> {
    let d = tape.dim(x);
    let wx = tape.matvec(adapter.w, x, d, d)?;
    tape.add(wx, adapter.b)
}

/// Returns `(t, weights)` with `weights = softmax(X q / sqrt(d))` and
/// `t = weights^T X`; `tokens` is a flat `rows x d` matrix.
pub fn attend_on_tape(
    tape: &mut Tape,
    query: Var,
    tokens: Var,
    rows: usize,
) -> Result<(Var, Var)> {
    let d = tape.dim(query);
    if rows == 0 {
        return Err(Error::shape("attentive_match", "empty token matrix"));
    }
    let raw = tape.matvec(tokens, query, rows, d)?;
    let scores = tape.scale(raw, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax(scores)?;
    let t = tape.vecmat(tokens, weights, rows, d)?;
    Ok((t, weights))
}

/// Pre-softmax class scores of a head.
pub fn head_logits_on_tape(tape: &mut Tape, head: &HeadVars, t: Var, hidden: usize) -> Result<Var> {
    let d = tape.dim(t);
    let z = tape.matvec(head.w1, t, hidden, d)?;
    let z = tape.add(z, head.b1)?;
    let h = tape.tanh(z);
    let classes = tape.dim(head.b2);
    let o = tape.matvec(head.w2, h, classes, hidden)?;
    tape.add(o, head.b2)
}

/// `-log softmax(logits)[class]`.
pub fn cross_entropy_on_tape(tape: &mut Tape, logits: Var, class: usize) -> Result<Var> {
    let lse = tape.log_sum_exp(logits)?;
    let picked = tape.index(logits, class)?;
    tape.sub(lse, picked)
}

/// Concept-guided contrastive loss for one facet. `None` when no anchor has
/// a positive in the batch.
pub fn cgcl_on_tape(
    tape: &mut Tape,
    anchors: [Var; 3],
    texts: &[Var],
    labels: &[Ideology],
    tau: f64,
) -> Result<Option<Var>> {
    if texts.len() != labels.len() {
        return Err(Error::shape("cgcl_loss", "texts and labels differ in length"));
    }
    let mut terms = Vec::new();
    for ideo in Ideology::ALL {
        if !labels.contains(&ideo) {
            continue;
        }
        let anchor = anchors[ideo.class()];
        let mut all = Vec::with_capacity(texts.len() + 2);
        let mut pos = Vec::new();
        for (&t, &y) in texts.iter().zip(labels) {
            let s = tape.cosine_sim(anchor, t)?;
            let s = tape.scale(s, 1.0 / tau);
            all.push(s);
            if y == ideo {
                pos.push(s);
            }
        }
        for other in Ideology::ALL.into_iter().filter(|&o| o != ideo) {
            let s = tape.cosine_sim(anchor, anchors[other.class()])?;
            all.push(tape.scale(s, 1.0 / tau));
        }
        let pos = tape.concat(&pos)?;
        let all = tape.concat(&all)?;
        let num = tape.log_sum_exp(pos)?;
        let den = tape.log_sum_exp(all)?;
        terms.push(tape.sub(den, num)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(tape.mean(&terms)?))
}

/// Supervised contrastive loss with the texts themselves as anchors. `None`
/// when no text has a same-label partner.
pub fn cl_on_tape(tape: &mut Tape, texts: &[Var], labels: &[usize], tau: f64) -> Result<Option<Var>> {
    let b = texts.len();
    if b != labels.len() {
        return Err(Error::shape("cl_loss", "texts and labels differ in length"));
    }
    if b < 2 {
        return Err(Error::shape("cl_loss", format!("needs at least 2 texts, got {b}")));
    }
    let mut sims: Vec<Vec<Option<Var>>> = vec![vec![None; b]; b];
    for i in 0..b {
        for k in i + 1..b {
            let s = tape.cosine_sim(texts[i], texts[k])?;
            let s = tape.scale(s, 1.0 / tau);
            sims[i][k] = Some(s);
            sims[k][i] = Some(s);
        }
    }
    let mut terms = Vec::new();
    for i in 0..b {
        let pos: Vec<Var> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| sims[i][j].expect("off-diagonal"))
            .collect();
        if pos.is_empty() {
            continue;
        }
        let all: Vec<Var> = (0..b)
            .filter(|&k| k != i)
            .map(|k| sims[i][k].expect("off-diagonal"))
            .collect();
        let pos = tape.concat(&pos)?;
        let all = tape.concat(&all)?;
        let num = tape.log_sum_exp(pos)?;
        let den = tape.log_sum_exp(all)?;
        terms.push(tape.sub(den, num)?);
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(tape.mean(&terms)?))
}

/// `(1/n) sum_i (CE_i + lambda CL_i)`; absent terms count as zero.
pub fn total_on_tape(
    tape: &mut Tape,
    ce: &[Option<Var>],
    cl: &[Option<Var>],
    lambda: f64,
    n: usize,
) -> Result<Var> {
    if ce.len() != cl.len() {
        return Err(Error::shape("total_loss", "per-facet lists differ in length"));
    }
    let mut parts = Vec::new();
    for (c, l) in ce.iter().zip(cl) {
        if let Some(c) = c {
            parts.push(*c);
        }
        if let Some(l) = l {
            parts.push(tape.scale(*l, lambda));
        }
    }
    if parts.is_empty() {
        return Err(Error::Data("batch contributes no loss terms".into()));
    }
    let stacked = tape.concat(&parts)?;
    let sum = tape.sum(stacked);
    Ok(tape.scale(sum, 1.0 / n as f64))
}

/// Result of [`attentive_match`].
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn attentive_match(query: &[f64], tokens: &Matrix) -> Result<Attended> {
    if tokens.rows() == 0 {
        return Err(Error::shape("attentive_match", "empty token matrix"));
    }
    let mut tape = Tape::new();
    let q = tape.constant(query.to_vec());
    let x = tape.constant(tokens.data().to_vec());
    let (t, w) = attend_on_tape(&mut tape, q, x, tokens.rows())?;
    Ok(Attended {
        output: tape.value(t).to_vec(),
        weights: tape.value(w).to_vec(),
    })
}

/// Class probabilities of `head` on `t`.
pub fn classify(t: &[f64], head: &FacetHead) -> Result<Vec<f64>> {
    if t.len() != head.dim {
        return Err(Error::shape("classify", format!("{} vs head dim {}", t.len(), head.dim)));
    }
    let mut tape = Tape::new();
    let vars = HeadVars {
        w1: tape.constant(head.w1.clone()),
        b1: tape.constant(head.b1.clone()),
        w2: tape.constant(head.w2.clone()),
        b2: tape.constant(head.b2.clone()),
    };
    let x = tape.constant(t.to_vec());
    let logits = head_logits_on_tape(&mut tape, &vars, x, head.hidden)?;
    let p = tape.softmax(logits)?;
    Ok(tape.value(p).to_vec())
}

pub fn cgcl_loss(
    anchors: [&[f64]; 3],
    texts: &[Vec<f64>],
    labels: &[Ideology],
    tau: f64,
) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::shape("cgcl_loss", "empty batch"));
    }
    let mut tape = Tape::new();
    let a = anchors.map(|v| tape.constant(v.to_vec()));
    let t: Vec<Var> = texts.iter().map(|v| tape.constant(v.clone())).collect();
    let loss = cgcl_on_tape(&mut tape, a, &t, labels, tau)?;
    Ok(loss.map_or(0.0, |l| tape.scalar(l)))
}

pub fn cl_loss<L: Copy + Into<usize>>(texts: &[Vec<f64>], labels: &[L], tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let t: Vec<Var> = texts.iter().map(|v| tape.constant(v.clone())).collect();
    let ids: Vec<usize> = labels.iter().map(|&l| l.into()).collect();
    let loss = cl_on_tape(&mut tape, &t, &ids, tau)?;
    Ok(loss.map_or(0.0, |l| tape.scalar(l)))
}

pub fn total_loss(ce: &[f64], cl: &[f64], lambda: f64, n: usize) -> Result<f64> {
    if ce.len() != cl.len() {
        return Err(Error::shape("total_loss", "per-facet lists differ in length"));
    }
    let sum: f64 = ce.iter().zip(cl).map(|(c, l)| c + lambda * l).sum();
    Ok(sum / n as f64)
}

/// `W x + b`, or `x` unchanged when no adapter is configured.
pub fn adapter_apply(adapter: Option<&Adapter>, x: &[f64]) -> Result<Vec<f64>> {
    let Some(a) = adapter else {
        return Ok(x.to_vec());
    };
    if x.len() != a.dim {
        return Err(Error::shape("adapter_apply", format!("{} vs {}", x.len(), a.dim)));
    }
    let mut tape = Tape::new();
    let vars = AdapterVars {
        w: tape.constant(a.w.clone()),
        b: tape.constant(a.b.clone()),
    };
    let xv = tape.constant(x.to_vec());
    let y = adapter_on_tape(&mut tape, &vars, xv)?;
    Ok(tape.value(y).to_vec())
}

impl From<Ideology> for usize {
    fn from(i: Ideology) -> usize {
        i.class()
    }
}

impl From<crate::labels::Relevance> for usize {
    fn from(r: crate::labels::Relevance) -> usize {
        r.class()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::Relevance;

    #[test]
    fn identical_rows_return_that_row() {
        let x = Matrix::from_rows(&[vec![0.2, -1.0], vec![0.2, -1.0], vec![0.2, -1.0]]).unwrap();
        let a = attentive_match(&[3.0, 7.0], &x).unwrap();
        for (o, e) in a.output.iter().zip([0.2, -1.0]) {
            assert!((o - e).abs() < 1e-15);
        }
    }

    #[test]
    fn two_token_example() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = attentive_match(&[1.0, 0.0], &x).unwrap();
        assert!((a.weights[0] - 0.6698).abs() < 1e-4);
        assert!((a.weights[1] - 0.3302).abs() < 1e-4);
        assert!((a.output[0] - 0.6698).abs() < 1e-4);
        assert!((a.output[1] - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn orthogonal_query_averages_rows() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
        let a = attentive_match(&[1.0, 0.0], &x).unwrap();
        assert_eq!(a.weights, vec![0.5, 0.5]);
        assert_eq!(a.output, vec![0.0, 2.0]);
    }

    #[test]
    fn empty_tokens_are_rejected() {
        let x = Matrix::new(0, 2, vec![]).unwrap();
        assert!(attentive_match(&[1.0, 0.0], &x).is_err());
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = FacetHead::zeros(4, 8, 3);
        let p = classify(&[1.0, 2.0, 3.0, 4.0], &head).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_arithmetic_through_bias() {
        let mut head = FacetHead::zeros(2, 1, 3);
        head.b2 = vec![2f64.ln(), 0.0, 0.0];
        let p = classify(&[0.0, 0.0], &head).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cgcl_uniform_similarity_closed_forms() {
        // every text equals every anchor, so all cosines are 1
        let v = vec![1.0, 2.0];
        let anchors = [v.as_slice(), v.as_slice(), v.as_slice()];
        let three_left = vec![v.clone(); 3];
        let l = cgcl_loss(anchors, &three_left, &[Ideology::Left; 3], 0.5).unwrap();
        assert!((l - -(3.0f64 / 5.0).ln()).abs() < 1e-12);

        let two = vec![v.clone(); 2];
        let l = cgcl_loss(anchors, &two, &[Ideology::Left, Ideology::Right], 0.1).unwrap();
        assert!((l - -(0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cgcl_rejects_zero_norm() {
        let z = vec![0.0, 0.0];
        let v = vec![1.0, 0.0];
        let err = cgcl_loss([&v, &v, &v], &[z], &[Ideology::Left], 0.1);
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn cl_closed_forms() {
        let a = vec![vec![1.0, 0.0], vec![0.3, 0.8]];
        let l = cl_loss(&a, &[Relevance::Related, Relevance::Related], 0.5).unwrap();
        assert!(l.abs() < 1e-15);

        let v = vec![vec![0.6, 0.8]; 3];
        let labels = [Relevance::Related, Relevance::Related, Relevance::Unrelated];
        let l = cl_loss(&v, &labels, 0.5).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        assert!(cl_loss(&v[..1], &labels[..1], 0.5).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert!((total_loss(&[1.0, 2.0], &[0.5, 0.5], 0.3, 2).unwrap() - 1.65).abs() < 1e-15);
        assert_eq!(total_loss(&[1.0, 2.0], &[0.5, 0.5], 0.0, 2).unwrap(), 1.5);
    }

    #[test]
    fn adapter_identity_and_disabled() {
        let x = [0.5, -2.0, 1.0];
        assert_eq!(adapter_apply(None, &x).unwrap(), x.to_vec());
        assert_eq!(adapter_apply(Some(&Adapter::identity(3)), &x).unwrap(), x.to_vec());
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig { tau: 0.0, lambda: 0.3 }.validate().is_err());
        assert!(LossConfig { tau: 0.1, lambda: -1.0 }.validate().is_err());
        assert!(LossConfig { tau: 0.1, lambda: 0.0 }.validate().is_ok());
    }
}
