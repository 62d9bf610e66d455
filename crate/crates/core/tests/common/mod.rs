//! Straight-line reference implementations used as test oracles. Nothing
//! here goes through the tape.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bico_core::model::{FacetHead, ModelParams};
use bico_core::schema::Level;
use bico_core::{ConceptTree, FlowFlags, Ideology, SchemaSpec};

pub const ONE_FACET: &str = r#"{"domains":[{"name":"Economy","facets":[
    {"code":"EO","name":"Economic Orientation","facet_concept":"economy",
     "left":"command","center":"mixed","right":"market"}]}]}"#;

pub fn one_facet_schema() -> SchemaSpec {
    SchemaSpec::from_json(ONE_FACET).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

/// Tree of `schema` with every node state drawn uniformly from (-1, 1).
pub fn random_tree(schema: &SchemaSpec, dim: usize, rng: &mut impl Rng) -> ConceptTree {
    let mut tree = bico_core::build_tree(schema, dim).unwrap();
    for id in 0..tree.len() {
        tree.set_state(id, uniform_vec(rng, dim, 1.0)).unwrap();
    }
    tree
}

pub fn to_complex(v: &[f64]) -> Vec<Complex64> {
    let h = v.len() / 2;
    (0..h).map(|k| Complex64::new(v[k], v[k + h])).collect()
}

pub fn from_complex(z: &[Complex64]) -> Vec<f64> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

fn path_to_root(tree: &ConceptTree, leaf: usize) -> Vec<usize> {
    let mut path = vec![leaf];
    while let Some(p) = tree.node(*path.last().unwrap()).parent {
        path.push(p);
    }
    path.reverse();
    path
}

/// One diffusion pass, walking every root-to-leaf path separately.
pub fn oracle_diffuse(tree: &ConceptTree, states: &mut Vec<Vec<f64>>, theta: &[Vec<f64>; 3]) {
    let mut out = states.clone();
    let leaves: Vec<usize> = tree
        .nodes()
        .iter()
        .filter(|n| n.level == Level::Ideology)
        .map(|n| n.id)
        .collect();
    for leaf in leaves {
        let path = path_to_root(tree, leaf);
        let mut primed = to_complex(&states[path[0]]);
        for i in 1..path.len() {
            let own = to_complex(&states[path[i]]);
            primed = own
                .iter()
                .zip(&primed)
                .zip(&theta[i - 1])
                .map(|((h, p), t)| h + p * Complex64::from_polar(1.0, *t))
                .collect();
            let scaled: Vec<Complex64> = primed.iter().map(|z| z / (i as f64 + 1.0)).collect();
            out[path[i]] = from_complex(&scaled);
        }
    }
    *states = out;
}

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    x.iter().map(|v| v.exp()).sum::<f64>().ln()
}

/// One aggregation pass; returns every parent's attention weights.
pub fn oracle_aggregate(tree: &ConceptTree, states: &mut [Vec<f64>], attn: &[Vec<f64>; 3]) -> Vec<Vec<f64>> {
    let d = tree.dim();
    let mut weights = Vec::new();
    for (level, a) in [(Level::Facet, &attn[2]), (Level::Domain, &attn[1]), (Level::Root, &attn[0])] {
        let parents: Vec<usize> = tree.nodes().iter().filter(|n| n.level == level).map(|n| n.id).collect();
        for p in parents {
            let mut members = vec![p];
            members.extend(tree.node(p).children.iter().copied());
            let scores: Vec<f64> = members
                .iter()
                .map(|&i| {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += a[j] * states[p][j] + a[d + j] * states[i][j];
                    }
                    leaky(s)
                })
                .collect();
            let alpha = softmax(&scores);
            let mut pooled = vec![0.0; d];
            for (w, &i) in alpha.iter().zip(&members) {
                for j in 0..d {
                    pooled[j] += w * states[i][j];
                }
            }
            states[p] = pooled.into_iter().map(elu).collect();
            weights.push(alpha);
        }
    }
    weights
}

pub fn oracle_encode(
    tree: &ConceptTree,
    mut states: Vec<Vec<f64>>,
    theta: &[Vec<f64>; 3],
    attn: &[Vec<f64>; 3],
    iters: usize,
    flags: FlowFlags,
) -> Vec<Vec<f64>> {
    for _ in 0..iters {
        if flags.diffusion {
            oracle_diffuse(tree, &mut states, theta);
        }
        if flags.aggregation {
            oracle_aggregate(tree, &mut states, attn);
        }
    }
    states
}

pub fn initial_states(tree: &ConceptTree) -> Vec<Vec<f64>> {
    tree.nodes().iter().map(|n| n.state.clone()).collect()
}

/// `max |a - b| / max |b|`.
pub fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

pub fn matvec(w: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

pub fn adapt(params: &ModelParams, x: &[f64]) -> Vec<f64> {
    match &params.adapter {
        None => x.to_vec(),
        Some(a) => matvec(&a.w, x, a.dim).iter().zip(&a.b).map(|(y, b)| y + b).collect(),
    }
}

pub fn head_logits(head: &FacetHead, t: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = matvec(&head.w1, t, head.hidden)
        .iter()
        .zip(&head.b1)
        .map(|(z, b)| (z + b).tanh())
        .collect();
    matvec(&head.w2, &z, head.classes)
        .iter()
        .zip(&head.b2)
        .map(|(o, b)| o + b)
        .collect()
}

pub fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    -softmax(logits)[class].ln()
}

/// `softmax(X q / sqrt(d))^T X` with `X` given as rows.
pub fn attend(q: &[f64], rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = q.len() as f64;
    let w = softmax(&rows.iter().map(|r| dot(r, q) / d.sqrt()).collect::<Vec<_>>());
    let mut t = vec![0.0; q.len()];
    for (wi, r) in w.iter().zip(rows) {
        for (tj, x) in t.iter_mut().zip(r) {
            *tj += wi * x;
        }
    }
    (t, w)
}

pub fn cgcl(anchors: &[Vec<f64>; 3], texts: &[Vec<f64>], labels: &[Ideology], tau: f64) -> Option<f64> {
    let mut terms = Vec::new();
    for c in 0..3 {
        if !labels.iter().any(|l| l.class() == c) {
            continue;
        }
        let mut all = Vec::new();
        let mut pos = Vec::new();
        for (t, l) in texts.iter().zip(labels) {
            let s = cosine(&anchors[c], t) / tau;
            all.push(s);
            if l.class() == c {
                pos.push(s);
            }
        }
        for o in (0..3).filter(|&o| o != c) {
            all.push(cosine(&anchors[c], &anchors[o]) / tau);
        }
        terms.push(log_sum_exp(&all) - log_sum_exp(&pos));
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

pub fn supcon(texts: &[Vec<f64>], labels: &[usize], tau: f64) -> Option<f64> {
    let b = texts.len();
    let mut terms = Vec::new();
    for i in 0..b {
        let pos: Vec<f64> = (0..b)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| cosine(&texts[i], &texts[j]) / tau)
            .collect();
        if pos.is_empty() {
            continue;
        }
        let all: Vec<f64> = (0..b)
            .filter(|&k| k != i)
            .map(|k| cosine(&texts[i], &texts[k]) / tau)
            .collect();
        terms.push(log_sum_exp(&all) - log_sum_exp(&pos));
    }
    (!terms.is_empty()).then(|| terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Concept states after the flow, with the adapter applied to facet and
/// ideology embeddings and domain/root states re-averaged.
pub fn reference_concepts(
    tree: &ConceptTree,
    params: &ModelParams,
    iters: usize,
    flags: FlowFlags,
) -> Vec<Vec<f64>> {
    let d = tree.dim();
    let mut states = initial_states(tree);
    if params.adapter.is_some() {
        for n in tree.nodes() {
            if matches!(n.level, Level::Facet | Level::Ideology) {
                states[n.id] = adapt(params, &n.state);
            }
        }
        for level in [Level::Domain, Level::Root] {
            for n in tree.nodes().iter().filter(|n| n.level == level) {
                let mut m = vec![0.0; d];
                for &c in &n.children {
                    for (mj, x) in m.iter_mut().zip(&states[c]) {
                        *mj += x / n.children.len() as f64;
                    }
                }
                states[n.id] = m;
            }
        }
    }
    oracle_encode(tree, states, &params.phases.theta, &params.agg.attn, iters, flags)
}

pub struct IdeologyItem {
    pub text: Vec<f64>,
    pub facet: usize,
    pub label: Ideology,
}

pub fn reference_ideology_loss(
    tree: &ConceptTree,
    params: &ModelParams,
    iters: usize,
    flags: FlowFlags,
    tau: f64,
    lambda: f64,
    batch: &[IdeologyItem],
) -> f64 {
    let states = reference_concepts(tree, params, iters, flags);
    let facets = tree.facets();
    let mut total = 0.0;
    for (f, (code, _)) in facets.iter().enumerate() {
        let items: Vec<&IdeologyItem> = batch.iter().filter(|it| it.facet == f).collect();
        if items.is_empty() {
            continue;
        }
        let texts: Vec<Vec<f64>> = items.iter().map(|it| adapt(params, &it.text)).collect();
        let labels: Vec<Ideology> = items.iter().map(|it| it.label).collect();
        let ce = texts
            .iter()
            .zip(&labels)
            .map(|(t, l)| cross_entropy(&head_logits(&params.heads[f], t), l.class()))
            .sum::<f64>()
            / texts.len() as f64;
        let anchors = [Ideology::Left, Ideology::Center, Ideology::Right]
            .map(|i| states[tree.ideology_node(code, i).unwrap()].clone());
        total += ce + lambda * cgcl(&anchors, &texts, &labels, tau).unwrap_or(0.0);
    }
    total / facets.len() as f64
}

/// `batch` holds token rows and one relevance class per facet.
pub fn reference_relevance_loss(
    tree: &ConceptTree,
    params: &ModelParams,
    iters: usize,
    flags: FlowFlags,
    tau: f64,
    lambda: f64,
    batch: &[(Vec<Vec<f64>>, Vec<usize>)],
) -> f64 {
    let states = reference_concepts(tree, params, iters, flags);
    let facets = tree.facets();
    let mut total = 0.0;
    for (f, (_, fid)) in facets.iter().enumerate() {
        let mut texts = Vec::new();
        let mut labels = Vec::new();
        let mut ce = 0.0;
        for (rows, ys) in batch {
            let adapted: Vec<Vec<f64>> = rows.iter().map(|r| adapt(params, r)).collect();
            let (t, _) = attend(&states[*fid], &adapted);
            ce += cross_entropy(&head_logits(&params.heads[f], &t), ys[f]);
            texts.push(t);
            labels.push(ys[f]);
        }
        ce /= batch.len() as f64;
        let cl = if texts.len() >= 2 {
            supcon(&texts, &labels, tau).unwrap_or(0.0)
        } else {
            0.0
        };
        total += ce + lambda * cl;
    }
    total / facets.len() as f64
}
