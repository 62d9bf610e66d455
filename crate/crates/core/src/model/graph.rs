use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::bico::{collect_output, encode_on_tape, BicoOutput, FlowFlags};
use crate::error::{Error, Result};
use crate::labels::{Ideology, Relevance, Subtask};
use crate::matrix::Matrix;
use crate::schema::{ConceptTree, Level};

use super::ops::{
    adapter_on_tape, attend_on_tape, cgcl_on_tape, cl_on_tape, cross_entropy_on_tape,
    head_logits_on_tape, total_on_tape, LossConfig,
};
use super::params::{AdapterVars, HeadVars, ModelParams, ParamVars};

pub const DEFAULT_HIDDEN: usize = 512;

/// Everything that shapes the forward computation of one subtask model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub subtask: Subtask,
    pub iters: usize,
    pub flags: FlowFlags,
    pub loss: LossConfig,
    pub hidden: usize,
    pub adapter: bool,
}

impl ModelConfig {
    /// Tuned defaults: 4 flow iterations and tau 0.5 for relevance, 2 and 0.1
    /// for ideology; lambda 0.3 and hidden size 512 for both.
    pub fn defaults(subtask: Subtask) -> Self {
        let (iters, tau) = match subtask {
            Subtask::Relevance => (4, 0.5),
            Subtask::Ideology => (2, 0.1),
        };
        Self {
            subtask,
            iters,
            flags: FlowFlags::default(),
            loss: LossConfig { tau, lambda: 0.3 },
            hidden: DEFAULT_HIDDEN,
            adapter: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        Ok(())
    }
}

/// One text for relevance training: token states and a label per facet.
#[derive(Debug, Clone)]
pub struct RelevanceExample<'a> {
    pub tokens: &'a Matrix,
    pub labels: Vec<Relevance>,
}

/// One (text, related facet) pair for ideology training.
#[derive(Debug, Clone)]
pub struct IdeologyExample<'a> {
    pub text: &'a [f64],
    /// Facet position in schema order.
    pub facet: usize,
    pub label: Ideology,
}

#[derive(Debug, Clone)]
pub enum Batch<'a> {
    Relevance(Vec<RelevanceExample<'a>>),
    Ideology(Vec<IdeologyExample<'a>>),
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        match self {
            Batch::Relevance(v) => v.len(),
            Batch::Ideology(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar loss with its per-facet parts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: Vec<Option<f64>>,
    pub contrastive: Vec<Option<f64>>,
}

/// Concept tree with initialized states plus trainable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub tree: ConceptTree,
    pub params: ModelParams,
}

struct Graph {
    total: Var,
    ce: Vec<Option<Var>>,
    contrastive: Vec<Option<Var>>,
}

impl Model {
    pub fn new(config: ModelConfig, tree: ConceptTree, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(
            tree.dim(),
            tree.facets().len(),
            config.hidden,
            config.subtask.num_classes(),
            config.adapter,
            &mut rng,
        );
        Ok(Self {
            config,
            tree,
            params,
        })
    }

    pub fn with_params(config: ModelConfig, tree: ConceptTree, params: ModelParams) -> Result<Self> {
        config.validate()?;
        if params.dim != tree.dim() || params.heads.len() != tree.facets().len() {
            return Err(Error::Config(format!(
                "parameters for dim {} / {} facets do not fit a tree of dim {} / {} facets",
                params.dim,
                params.heads.len(),
                tree.dim(),
                tree.facets().len()
            )));
        }
        if params.adapter.is_some() != config.adapter {
            return Err(Error::Config("adapter setting disagrees with parameters".into()));
        }
        Ok(Self {
            config,
            tree,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn num_facets(&self) -> usize {
        self.tree.facets().len()
    }

    /// Loss value, per-facet parts and the flat gradient of the total.
    pub fn loss_and_grad(&self, batch: &Batch<'_>) -> Result<(LossBreakdown, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let g = self.build(&mut tape, &vars, batch)?;
        let total = tape.scalar(g.total);
        if !total.is_finite() {
            return Err(Error::Numeric(format!("loss is {total}")));
        }
        let grads = tape.backward(g.total)?;
        let flat = vars.flat_grads(&grads);
        if let Some(i) = flat.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
        }
        let read = |v: &Option<Var>| v.map(|v| tape.scalar(v));
        Ok((
            LossBreakdown {
                total,
                ce: g.ce.iter().map(read).collect(),
                contrastive: g.contrastive.iter().map(read).collect(),
            },
            flat,
        ))
    }

    pub fn loss(&self, batch: &Batch<'_>) -> Result<f64> {
        self.loss_with(&self.params, batch)
    }

    /// Loss with the parameters replaced by `params`.
    pub fn loss_with(&self, params: &ModelParams, batch: &Batch<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let g = self.build(&mut tape, &vars, batch)?;
        Ok(tape.scalar(g.total))
    }

    /// Loss at a flat parameter vector (for finite differences).
    pub fn loss_at(&self, flat: &[f64], batch: &Batch<'_>) -> Result<f64> {
        let mut p = self.params.clone();
        p.set_flat(flat)?;
        self.loss_with(&p, batch)
    }

    /// Initial concept states on the tape: leaves and facets from their
    /// (adapted) embeddings, domains and root by averaging.
    fn initial_states(&self, tape: &mut Tape, adapter: Option<&AdapterVars>) -> Result<Vec<Var>> {
        let tree = &self.tree;
        let Some(adapter) = adapter else {
            return Ok(tree
                .nodes()
                .iter()
                .map(|n| tape.constant(n.state.clone()))
                .collect());
        };
        let mut states: Vec<Option<Var>> = vec![None; tree.len()];
        for n in tree.nodes() {
            if matches!(n.level, Level::Facet | Level::Ideology) {
                let c = tape.constant(n.state.clone());
                states[n.id] = Some(adapter_on_tape(tape, adapter, c)?);
            }
        }
        for level in [Level::Domain, Level::Root] {
            for id in tree.ids_at(level) {
                let kids: Vec<Var> = tree
                    .node(id)
                    .children
                    .iter()
                    .map(|&c| states[c].expect("children first"))
                    .collect();
                states[id] = Some(tape.mean(&kids)?);
            }
        }
        Ok(states.into_iter().map(|s| s.expect("every node set")).collect())
    }

    fn concept_states(&self, tape: &mut Tape, vars: &ParamVars) -> Result<Vec<Var>> {
        let init = self.initial_states(tape, vars.adapter.as_ref())?;
        encode_on_tape(
            tape,
            &self.tree,
            init,
            &vars.phases,
            &vars.attn,
            self.config.iters,
            self.config.flags,
        )
    }

    fn text_var(&self, tape: &mut Tape, adapter: Option<&AdapterVars>, v: &[f64]) -> Result<Var> {
        let c = tape.constant(v.to_vec());
        match adapter {
            Some(a) => adapter_on_tape(tape, a, c),
            None => Ok(c),
        }
    }

    fn token_var(&self, tape: &mut Tape, adapter: Option<&AdapterVars>, tokens: &Matrix) -> Result<Var> {
        if tokens.cols() != self.dim() {
            return Err(Error::shape(
                "tokens",
                format!("width {} vs model dim {}", tokens.cols(), self.dim()),
            ));
        }
        match adapter {
            None => Ok(tape.constant(tokens.data().to_vec())),
            Some(a) => {
                let mut rows = Vec::with_capacity(tokens.rows());
                for r in tokens.iter_rows() {
                    let c = tape.constant(r.to_vec());
                    rows.push(adapter_on_tape(tape, a, c)?);
                }
                tape.concat(&rows)
            }
        }
    }

    fn build(&self, tape: &mut Tape, vars: &ParamVars, batch: &Batch<'_>) -> Result<Graph> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let states = self.concept_states(tape, vars)?;
        let n = self.num_facets();
        let hidden = self.config.hidden;
        let tau = self.config.loss.tau;
        let mut ce: Vec<Option<Var>> = vec![None; n];
        let mut contrastive: Vec<Option<Var>> = vec![None; n];

        match batch {
            Batch::Relevance(examples) => {
                let queries: Vec<Var> = self.tree.facets().iter().map(|(_, id)| states[*id]).collect();
                let mut ce_terms: Vec<Vec<Var>> = vec![Vec::new(); n];
                let mut texts: Vec<Vec<Var>> = vec![Vec::new(); n];
                let mut labels: Vec<Vec<usize>> = vec![Vec::new(); n];
                for ex in examples {
                    if ex.labels.len() != n {
                        return Err(Error::Data(format!(
                            "{} relevance labels for {n} facets",
                            ex.labels.len()
                        )));
                    }
                    let x = self.token_var(tape, vars.adapter.as_ref(), ex.tokens)?;
                    for f in 0..n {
                        let (t, _) = attend_on_tape(tape, queries[f], x, ex.tokens.rows())?;
                        let logits = head_logits_on_tape(tape, &vars.heads[f], t, hidden)?;
                        let class = ex.labels[f].class();
                        ce_terms[f].push(cross_entropy_on_tape(tape, logits, class)?);
                        texts[f].push(t);
                        labels[f].push(class);
                    }
                }
                for f in 0..n {
                    ce[f] = Some(tape.mean(&ce_terms[f])?);
                    if texts[f].len() >= 2 {
                        contrastive[f] = cl_on_tape(tape, &texts[f], &labels[f], tau)?;
                    }
                }
            }
            Batch::Ideology(examples) => {
                let mut ce_terms: Vec<Vec<Var>> = vec![Vec::new(); n];
                let mut texts: Vec<Vec<Var>> = vec![Vec::new(); n];
                let mut labels: Vec<Vec<Ideology>> = vec![Vec::new(); n];
                for ex in examples {
                    if ex.facet >= n {
                        return Err(Error::Data(format!("facet index {} out of range", ex.facet)));
                    }
                    if ex.text.len() != self.dim() {
                        return Err(Error::shape(
                            "text",
                            format!("length {} vs model dim {}", ex.text.len(), self.dim()),
                        ));
                    }
                    let t = self.text_var(tape, vars.adapter.as_ref(), ex.text)?;
                    let logits = head_logits_on_tape(tape, &vars.heads[ex.facet], t, hidden)?;
                    ce_terms[ex.facet].push(cross_entropy_on_tape(tape, logits, ex.label.class())?);
                    texts[ex.facet].push(t);
                    labels[ex.facet].push(ex.label);
                }
                for (f, (code, _)) in self.tree.facets().iter().enumerate() {
                    if ce_terms[f].is_empty() {
                        continue;
                    }
                    ce[f] = Some(tape.mean(&ce_terms[f])?);
                    let anchors = Ideology::ALL.map(|i| {
                        states[self.tree.ideology_node(code, i).expect("leaf exists")]
                    });
                    contrastive[f] = cgcl_on_tape(tape, anchors, &texts[f], &labels[f], tau)?;
                }
            }
        }
        let total = total_on_tape(tape, &ce, &contrastive, self.config.loss.lambda, n)?;
        Ok(Graph {
            total,
            ce,
            contrastive,
        })
    }

    /// Concept representations after the flow, with the adapter applied to
    /// the initial states.
    pub fn concept_reps(&self) -> Result<BicoOutput> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let states = self.concept_states(&mut tape, &vars)?;
        collect_output(&self.tree, |id| tape.value(states[id]).to_vec())
    }

    /// Adapter output for an ideology text vector.
    pub fn text_representation(&self, text: &[f64]) -> Result<Vec<f64>> {
        super::ops::adapter_apply(self.params.adapter.as_ref(), text)
    }

    /// Facet-aware text representation and class probabilities for every
    /// facet, given concept representations from [`Model::concept_reps`].
    pub fn relevance_forward(&self, reps: &BicoOutput, tokens: &Matrix) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut tape = Tape::new();
        let adapter = self.adapter_consts(&mut tape);
        let x = self.token_var(&mut tape, adapter.as_ref(), tokens)?;
        let mut out = Vec::with_capacity(self.num_facets());
        for (f, c) in reps.facets.iter().enumerate() {
            let q = tape.constant(c.as_slice().to_vec());
            let (t, _) = attend_on_tape(&mut tape, q, x, tokens.rows())?;
            let head = self.head_consts(&mut tape, f);
            let logits = head_logits_on_tape(&mut tape, &head, t, self.config.hidden)?;
            let p = tape.softmax(logits)?;
            out.push((tape.value(t).to_vec(), tape.value(p).to_vec()));
        }
        Ok(out)
    }

    pub fn predict_relevance(&self, reps: &BicoOutput, tokens: &Matrix) -> Result<Vec<Relevance>> {
        Ok(self
            .relevance_forward(reps, tokens)?
            .into_iter()
            .map(|(_, p)| Relevance::from_class(argmax(&p)))
            .collect())
    }

    /// Text representation and class probabilities for one (text, facet) pair.
    pub fn ideology_forward(&self, text: &[f64], facet: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if facet >= self.num_facets() {
            return Err(Error::Data(format!("facet index {facet} out of range")));
        }
        let mut tape = Tape::new();
        let adapter = self.adapter_consts(&mut tape);
        let t = self.text_var(&mut tape, adapter.as_ref(), text)?;
        let head = self.head_consts(&mut tape, facet);
        let logits = head_logits_on_tape(&mut tape, &head, t, self.config.hidden)?;
        let p = tape.softmax(logits)?;
        Ok((tape.value(t).to_vec(), tape.value(p).to_vec()))
    }

    pub fn predict_ideology(&self, text: &[f64], facet: usize) -> Result<Ideology> {
        let (_, p) = self.ideology_forward(text, facet)?;
        Ok(Ideology::from_class(argmax(&p)))
    }

    fn adapter_consts(&self, tape: &mut Tape) -> Option<AdapterVars> {
        self.params.adapter.as_ref().map(|a| AdapterVars {
            w: tape.constant(a.w.clone()),
            b: tape.constant(a.b.clone()),
        })
    }

    fn head_consts(&self, tape: &mut Tape, facet: usize) -> HeadVars {
        let h = &self.params.heads[facet];
        HeadVars {
            w1: tape.constant(h.w1.clone()),
            b1: tape.constant(h.b1.clone()),
            w2: tape.constant(h.w2.clone()),
            b2: tape.constant(h.b2.clone()),
        }
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
