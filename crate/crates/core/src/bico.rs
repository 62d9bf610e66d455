//! Bidirectional iterative concept flow over a [`ConceptTree`].
//!
//! A state of even dimension `d` is read as `d/2` complex numbers: entry `k`
//! is the real part and entry `k + d/2` the imaginary part of element `k`.
//!
//! One iteration runs two passes in a fixed order:
//!
//! 1. **Metapath diffusion** (root to leaf). Along every root-to-leaf path,
//!    `h'_0 = h_0`, `h'_i = h_i + h'_{i-1} * r_{i-1}` (element-wise complex
//!    product with a unit-modulus rotation shared by all edges between two
//!    levels) and the new state is `o_i = h'_i / (i + 1)`. Each node has a
//!    single parent, so it is updated once even though many paths cross it.
//! 2. **Hierarchy aggregation** (leaf to root). Parents at level 2, then 1,
//!    then 0 attend over themselves and their own children:
//!    `e_pi = LeakyReLU(A_l . [h_p ; h_i])`, `alpha = softmax(e)`,
//!    `h'_p = ELU(sum_i alpha_pi h_i)`. Each level reads the child states the
//!    previous level just wrote.
//!
//! States carry over between iterations; nothing is reset to the initial
//! embeddings.
//!
//! All math is recorded on an autodiff [`Tape`] so the same code path serves
//! training and the value-level functions below.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::labels::Ideology;
use crate::schema::{ConceptTree, Level};

/// Negative slope of the attention-score LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Real vector of even length viewed as `len/2` complex numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVec(Vec<f64>);

impl ComplexVec {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(2) {
            return Err(Error::shape(
                "ComplexVec",
                format!("odd length {}", data.len()),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("ComplexVec with non-finite entry".into()));
        }
        Ok(Self(data))
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::shape("ComplexVec", "real/imaginary length mismatch"));
        }
        Self::new([re, im].concat())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn complex_dim(&self) -> usize {
        self.0.len() / 2
    }

    pub fn re(&self) -> &[f64] {
        &self.0[..self.complex_dim()]
    }

    pub fn im(&self) -> &[f64] {
        &self.0[self.complex_dim()..]
    }

    /// Element-wise modulus.
    pub fn modulus(&self) -> Vec<f64> {
        self.re()
            .iter()
            .zip(self.im())
            .map(|(r, i)| r.hypot(*i))
            .collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn complex_product(a: &ComplexVec, b: &ComplexVec) -> Result<ComplexVec> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.0.clone()), tape.constant(b.0.clone()));
    let p = tape.complex_mul(x, y)?;
    Ok(ComplexVec(tape.value(p).to_vec()))
}

/// `(cos theta | sin theta)`: a unit-modulus rotation per complex element.
pub fn phases_to_rotation(theta: &[f64]) -> ComplexVec {
    let re: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
    let im: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
    ComplexVec([re, im].concat())
}

/// Rotation phases for the three inter-level edge types (0-1, 1-2, 2-3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePhases {
    pub theta: [Vec<f64>; 3],
}

impl EdgePhases {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: std::array::from_fn(|_| vec![0.0; dim / 2]),
        }
    }

    /// Uniform draws in `(-pi, pi)`.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Self {
            theta: std::array::from_fn(|_| {
                (0..dim / 2).map(|_| rng.gen_range(-PI..PI)).collect()
            }),
        }
    }

    pub fn rotation(&self, edge_level: usize) -> ComplexVec {
        phases_to_rotation(&self.theta[edge_level])
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.theta.iter().any(|t| t.len() * 2 != dim) {
            return Err(Error::shape("EdgePhases", format!("expected {} phases", dim / 2)));
        }
        Ok(())
    }
}

/// Attention vectors `A_l` of length `2d` for parent levels 0, 1, 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggParams {
    pub attn: [Vec<f64>; 3],
}

impl AggParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            attn: std::array::from_fn(|_| vec![0.0; 2 * dim]),
        }
    }

    /// Uniform in `[-1/sqrt(2d), 1/sqrt(2d)]`, independently per level.
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((2 * dim) as f64).sqrt();
        Self {
            attn: std::array::from_fn(|_| {
                (0..2 * dim).map(|_| rng.gen_range(-bound..=bound)).collect()
            }),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.attn.iter().any(|a| a.len() != 2 * dim) {
            return Err(Error::shape("AggParams", format!("expected length {}", 2 * dim)));
        }
        Ok(())
    }
}

/// Switches for the two passes; disabling one reproduces the single-direction
/// ablations, disabling both leaves the initial states untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowFlags {
    pub diffusion: bool,
    pub aggregation: bool,
}

impl Default for FlowFlags {
    fn default() -> Self {
        Self {
            diffusion: true,
            aggregation: true,
        }
    }
}

/// Attention weights of one parent over `[parent, children...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub parent: usize,
    pub weights: Vec<f64>,
}

/// Enriched facet and ideology states.
#[derive(Debug, Clone, PartialEq)]
pub struct BicoOutput {
    /// One per facet, schema order.
    pub facets: Vec<ComplexVec>,
    /// Three per facet (Left, Center, Right), schema order.
    pub ideologies: Vec<ComplexVec>,
}

impl BicoOutput {
    pub fn ideology(&self, facet_pos: usize, ideology: Ideology) -> &ComplexVec {
        &self.ideologies[3 * facet_pos + ideology.class()]
    }
}

/// Tape variables for the rotation of each edge level, derived from phases.
pub fn rotations_on_tape(tape: &mut Tape, phases: &[Var; 3]) -> Result<[Var; 3]> {
    let mut out = [phases[0]; 3];
    for (slot, &theta) in out.iter_mut().zip(phases) {
        let c = tape.cos(theta);
        let s = tape.sin(theta);
        *slot = tape.concat(&[c, s])?;
    }
    Ok(out)
}

/// Root-to-leaf pass; `states` is indexed by node id and updated in place.
pub fn diffuse_on_tape(
    tape: &mut Tape,
    tree: &ConceptTree,
    states: &mut [Var],
    rotations: &[Var; 3],
) -> Result<()> {
    // Node ids are pre-order, so every parent's primed state exists before
    // its children are visited.
    let mut primed: Vec<Option<Var>> = vec![None; tree.len()];
    for node in tree.nodes() {
        let depth = node.level.depth();
        let Some(parent) = node.parent else {
            primed[node.id] = Some(states[node.id]);
            continue;
        };
        let up = primed[parent].expect("parent visited first");
        let rotated = tape.complex_mul(up, rotations[depth - 1])?;
        let h = tape.add(states[node.id], rotated)?;
        primed[node.id] = Some(h);
        states[node.id] = tape.scale(h, 1.0 / (depth as f64 + 1.0));
    }
    Ok(())
}

/// Leaf-to-root pass; `attn[l]` scores parents at level `l`.
pub fn aggregate_on_tape(
    tape: &mut Tape,
    tree: &ConceptTree,
    states: &mut [Var],
    attn: &[Var; 3],
    mut trace: Option<&mut Vec<AttentionTrace>>,
) -> Result<()> {
    for level in [Level::Facet, Level::Domain, Level::Root] {
        let a = attn[level.depth()];
        for p in tree.ids_at(level) {
            let hp = states[p];
            let members: Vec<Var> = std::iter::once(hp)
                .chain(tree.node(p).children.iter().map(|&c| states[c]))
                .collect();
            let mut scores = Vec::with_capacity(members.len());
            for &hi in &members {
                let pair = tape.concat(&[hp, hi])?;
                let raw = tape.dot(a, pair)?;
                scores.push(tape.leaky_relu(raw, LEAKY_SLOPE));
            }
            let scores = tape.concat(&scores)?;
            let alpha = tape.softmax(scores)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(AttentionTrace {
                    parent: p,
                    weights: tape.value(alpha).to_vec(),
                });
            }
            let pooled = tape.combine(alpha, &members)?;
            states[p] = tape.elu(pooled);
        }
    }
    Ok(())
}

/// `iters` rounds of diffusion then aggregation, honoring `flags`.
pub fn encode_on_tape(
    tape: &mut Tape,
    tree: &ConceptTree,
    mut states: Vec<Var>,
    phases: &[Var; 3],
    attn: &[Var; 3],
    iters: usize,
    flags: FlowFlags,
) -> Result<Vec<Var>> {
    if iters == 0 || !(flags.diffusion || flags.aggregation) {
        return Ok(states);
    }
    let rotations = if flags.diffusion {
        Some(rotations_on_tape(tape, phases)?)
    } else {
        None
    };
    for _ in 0..iters {
        if let Some(r) = &rotations {
            diffuse_on_tape(tape, tree, &mut states, r)?;
        }
        if flags.aggregation {
            aggregate_on_tape(tape, tree, &mut states, attn, None)?;
        }
    }
    Ok(states)
}

fn load_tree(tape: &mut Tape, tree: &ConceptTree) -> Vec<Var> {
    tree.nodes()
        .iter()
        .map(|n| tape.constant(n.state.clone()))
        .collect()
}

fn write_back(tape: &Tape, tree: &ConceptTree, states: &[Var]) -> Result<ConceptTree> {
    let mut out = tree.clone();
    for (id, &v) in states.iter().enumerate() {
        out.set_state(id, tape.value(v).to_vec())?;
    }
    Ok(out)
}

/// One root-to-leaf diffusion pass; the root state is unchanged.
pub fn metapath_diffusion(tree: &ConceptTree, phases: &EdgePhases) -> Result<ConceptTree> {
    phases.check(tree.dim())?;
    let mut tape = Tape::new();
    let mut states = load_tree(&mut tape, tree);
    let theta = phases.theta.clone().map(|t| tape.constant(t));
    let rot = rotations_on_tape(&mut tape, &theta)?;
    diffuse_on_tape(&mut tape, tree, &mut states, &rot)?;
    write_back(&tape, tree, &states)
}

/// One leaf-to-root aggregation pass; leaves are unchanged.
pub fn hierarchy_aggregation(tree: &ConceptTree, agg: &AggParams) -> Result<ConceptTree> {
    hierarchy_aggregation_traced(tree, agg).map(|(t, _)| t)
}

/// Like [`hierarchy_aggregation`], also returning every parent's weights.
pub fn hierarchy_aggregation_traced(
    tree: &ConceptTree,
    agg: &AggParams,
) -> Result<(ConceptTree, Vec<AttentionTrace>)> {
    agg.check(tree.dim())?;
    let mut tape = Tape::new();
    let mut states = load_tree(&mut tape, tree);
    let attn = agg.attn.clone().map(|a| tape.constant(a));
    let mut trace = Vec::new();
    aggregate_on_tape(&mut tape, tree, &mut states, &attn, Some(&mut trace))?;
    Ok((write_back(&tape, tree, &states)?, trace))
}

/// Runs `iters` flow iterations from the tree's current states and returns
/// the final facet and ideology states.
pub fn bico_encode(
    tree: &ConceptTree,
    phases: &EdgePhases,
    agg: &AggParams,
    iters: usize,
    flags: FlowFlags,
) -> Result<BicoOutput> {
    phases.check(tree.dim())?;
    agg.check(tree.dim())?;
    let mut tape = Tape::new();
    let states = load_tree(&mut tape, tree);
    let theta = phases.theta.clone().map(|t| tape.constant(t));
    let attn = agg.attn.clone().map(|a| tape.constant(a));
    let states = encode_on_tape(&mut tape, tree, states, &theta, &attn, iters, flags)?;
    collect_output(tree, |id| tape.value(states[id]).to_vec())
}

pub(crate) fn collect_output(
    tree: &ConceptTree,
    value: impl Fn(usize) -> Vec<f64>,
) -> Result<BicoOutput> {
    let mut facets = Vec::with_capacity(tree.facets().len());
    let mut ideologies = Vec::with_capacity(3 * tree.facets().len());
    for (code, fid) in tree.facets() {
        facets.push(ComplexVec::new(value(*fid))?);
        for ideo in Ideology::ALL {
            let leaf = tree.ideology_node(code, ideo).expect("leaf exists");
            ideologies.push(ComplexVec::new(value(leaf))?);
        }
    }
    Ok(BicoOutput { facets, ideologies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{build_tree, SchemaSpec};
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};

    fn cv(v: &[f64]) -> ComplexVec {
        ComplexVec::new(v.to_vec()).unwrap()
    }

    fn one_facet_tree(dim: usize) -> ConceptTree {
        let s = SchemaSpec::from_json(
            r#"{"domains":[{"name":"D","facets":[{"code":"F","facet_concept":"f",
            "left":"l","center":"c","right":"r"}]}]}"#,
        )
        .unwrap();
        build_tree(&s, dim).unwrap()
    }

    #[test]
    fn complex_product_examples() {
        assert_eq!(complex_product(&cv(&[1.0, 0.0]), &cv(&[0.0, 1.0])).unwrap(), cv(&[0.0, 1.0]));
        assert_eq!(
            complex_product(&cv(&[1.0, 2.0]), &cv(&[3.0, 4.0])).unwrap(),
            cv(&[-5.0, 10.0])
        );
        let a = cv(&[0.3, -1.0, 2.0, 0.5]);
        assert_eq!(complex_product(&a, &cv(&[1.0, 1.0, 0.0, 0.0])).unwrap(), a);
        assert!(complex_product(&a, &cv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn complex_vec_rejects_odd_or_non_finite() {
        assert!(ComplexVec::new(vec![1.0]).is_err());
        assert!(ComplexVec::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(phases_to_rotation(&[0.0]).as_slice(), &[1.0, 0.0]);
        let r = phases_to_rotation(&[FRAC_PI_2]);
        assert!(r.re()[0].abs() < 1e-16 && (r.im()[0] - 1.0).abs() < 1e-16);
        let r = phases_to_rotation(&[PI / 4.0]);
        assert!((r.re()[0] - FRAC_1_SQRT_2).abs() < 1e-15 && (r.im()[0] - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_phase_diffusion_gives_running_means() {
        let mut t = one_facet_tree(2);
        // path root(0) - domain(1) - facet(2) - left leaf(3)
        for (id, v) in [(0, 2.0), (1, 0.0), (2, 4.0), (3, 0.0)] {
            t.set_state(id, vec![v, 0.0]).unwrap();
        }
        let out = metapath_diffusion(&t, &EdgePhases::zeros(2)).unwrap();
        assert_eq!(out.state(0), &[2.0, 0.0]);
        assert_eq!(out.state(1), &[1.0, 0.0]);
        assert_eq!(out.state(2), &[2.0, 0.0]);
        assert_eq!(out.state(3), &[1.5, 0.0]);
    }

    #[test]
    fn quarter_turn_on_first_edge() {
        let mut t = one_facet_tree(2);
        t.set_state(0, vec![1.0, 0.0]).unwrap();
        let mut phases = EdgePhases::zeros(2);
        phases.theta[0] = vec![FRAC_PI_2];
        let out = metapath_diffusion(&t, &phases).unwrap();
        assert!(out.state(1)[0].abs() < 1e-16);
        assert!((out.state(1)[1] - 0.5).abs() < 1e-16);
    }

    #[test]
    fn identical_nonnegative_inputs_are_a_fixed_point() {
        let mut t = one_facet_tree(4);
        let v = vec![0.5, 1.0, 0.0, 2.0];
        // facet (2) with its three leaves
        for id in 2..6 {
            t.set_state(id, v.clone()).unwrap();
        }
        let mut rng = rand::thread_rng();
        let (out, trace) = hierarchy_aggregation_traced(&t, &AggParams::random(4, &mut rng)).unwrap();
        let facet = trace.iter().find(|tr| tr.parent == 2).unwrap();
        assert!(facet.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
        for (a, b) in out.state(2).iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_attention_weights_are_uniform() {
        let t = build_tree(&SchemaSpec::default_mitweet(), 4).unwrap();
        let (_, trace) = hierarchy_aggregation_traced(&t, &AggParams::zeros(4)).unwrap();
        assert_eq!(trace.len(), 1 + 5 + 12);
        for tr in trace {
            let n = t.node(tr.parent).children.len() + 1;
            assert!(tr.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let mut t = one_facet_tree(2);
        for id in 0..t.len() {
            t.set_state(id, vec![id as f64, -(id as f64)]).unwrap();
        }
        let mut rng = rand::thread_rng();
        let out = bico_encode(
            &t,
            &EdgePhases::random(2, &mut rng),
            &AggParams::random(2, &mut rng),
            0,
            FlowFlags::default(),
        )
        .unwrap();
        assert_eq!(out.facets[0].as_slice(), t.state(2));
        assert_eq!(out.ideology(0, Ideology::Right).as_slice(), t.state(5));
    }

    #[test]
    fn both_passes_disabled_keeps_initial_states() {
        let mut t = one_facet_tree(2);
        for id in 0..t.len() {
            t.set_state(id, vec![1.0 + id as f64, 0.5]).unwrap();
        }
        let mut rng = rand::thread_rng();
        let out = bico_encode(
            &t,
            &EdgePhases::random(2, &mut rng),
            &AggParams::random(2, &mut rng),
            3,
            FlowFlags {
                diffusion: false,
                aggregation: false,
            },
        )
        .unwrap();
        assert_eq!(out.facets[0].as_slice(), t.state(2));
    }

    #[test]
    fn mismatched_parameter_shapes_are_rejected() {
        let t = one_facet_tree(4);
        assert!(metapath_diffusion(&t, &EdgePhases::zeros(2)).is_err());
        assert!(hierarchy_aggregation(&t, &AggParams::zeros(2)).is_err());
    }
}
