//! Concept hierarchy: the schema file, the four-level tree built from it, and
//! node state initialization from concept embeddings.
//!
//! Node ids follow a pre-order walk of the schema file: the root is `0`, then
//! each domain is followed by its facets, and each facet by its Left, Center
//! and Right leaves.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Ideology;

/// The shipped five-domain, twelve-facet schema.
pub const DEFAULT_SCHEMA_JSON: &str = include_str!("../../../schema/mitweet_schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetSpec {
    pub code: String,
    pub name: String,
    pub facet_concept: String,
    pub left: String,
    pub center: String,
    pub right: String,
}

impl FacetSpec {
    pub fn ideology_concept(&self, ideology: Ideology) -> &str {
        match ideology {
            Ideology::Left => &self.left,
            Ideology::Center => &self.center,
            Ideology::Right => &self.right,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub facets: Vec<FacetSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub domains: Vec<DomainSpec>,
}

// Mirrors the file layout with every field optional so a missing concept text
// produces a targeted error rather than a generic parse failure.
#[derive(Deserialize)]
struct RawFacet {
    code: String,
    name: Option<String>,
    facet_concept: Option<String>,
    left: Option<String>,
    center: Option<String>,
    right: Option<String>,
}

#[derive(Deserialize)]
struct RawDomain {
    name: String,
    facets: Vec<RawFacet>,
}

#[derive(Deserialize)]
struct RawSchema {
    domains: Vec<RawDomain>,
}

impl SchemaSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSchema =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("schema: {e}")))?;
        let mut seen = HashSet::new();
        let mut domains = Vec::with_capacity(raw.domains.len());
        for d in raw.domains {
            let mut facets = Vec::with_capacity(d.facets.len());
            for f in d.facets {
                if !seen.insert(f.code.clone()) {
                    return Err(Error::Schema(format!("duplicate facet code {:?}", f.code)));
                }
                let need = |field: Option<String>, what: &str| {
                    field.ok_or_else(|| {
                        Error::Schema(format!("facet {:?} is missing its {what} concept", f.code))
                    })
                };
                facets.push(FacetSpec {
                    name: f.name.clone().unwrap_or_else(|| f.code.clone()),
                    facet_concept: need(f.facet_concept.clone(), "facet")?,
                    left: need(f.left.clone(), "left")?,
                    center: need(f.center.clone(), "center")?,
                    right: need(f.right.clone(), "right")?,
                    code: f.code,
                });
            }
            if facets.is_empty() {
                return Err(Error::Schema(format!("domain {:?} has no facets", d.name)));
            }
            domains.push(DomainSpec {
                name: d.name,
                facets,
            });
        }
        if domains.is_empty() {
            return Err(Error::Schema("schema has no domains".into()));
        }
        Ok(Self { domains })
    }

    pub fn default_mitweet() -> Self {
        Self::from_json(DEFAULT_SCHEMA_JSON).expect("shipped schema is valid")
    }

    pub fn facets(&self) -> impl Iterator<Item = &FacetSpec> {
        self.domains.iter().flat_map(|d| d.facets.iter())
    }

    pub fn facet_codes(&self) -> Vec<String> {
        self.facets().map(|f| f.code.clone()).collect()
    }

    pub fn num_facets(&self) -> usize {
        self.facets().count()
    }

    pub fn facet(&self, code: &str) -> Option<&FacetSpec> {
        self.facets().find(|f| f.code == code)
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<SchemaSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SchemaSpec::from_json(&text)
}

/// Embedding key of a facet concept.
pub fn facet_key(code: &str) -> String {
    code.to_string()
}

/// Embedding key of an ideology concept, e.g. `EO:L`.
pub fn ideology_key(code: &str, ideology: Ideology) -> String {
    format!("{code}:{}", ideology.short())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    Root = 0,
    Domain = 1,
    Facet = 2,
    Ideology = 3,
}

impl Level {
    pub fn depth(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub level: Level,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Domain name, facet code, or `code:L|C|R` for leaves.
    pub label: String,
    pub state: Vec<f64>,
}

/// Source of concept vectors keyed by [`facet_key`] / [`ideology_key`].
pub trait ConceptEmbeddings {
    fn concept(&self, key: &str) -> Option<&[f64]>;
}

impl ConceptEmbeddings for HashMap<String, Vec<f64>> {
    fn concept(&self, key: &str) -> Option<&[f64]> {
        self.get(key).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTree {
    nodes: Vec<TreeNode>,
    dim: usize,
    facets: Vec<(String, usize)>,
    facet_index: HashMap<String, usize>,
    ideology_index: HashMap<(String, Ideology), usize>,
}

/// Builds the tree with zeroed states of dimension `dim` (must be even).
pub fn build_tree(spec: &SchemaSpec, dim: usize) -> Result<ConceptTree> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "state dimension must be even and positive, got {dim}"
        )));
    }
    let mut nodes = Vec::new();
    let push = |level, parent: Option<usize>, label: String, nodes: &mut Vec<TreeNode>| {
        let id = nodes.len();
        nodes.push(TreeNode {
            id,
            level,
            parent,
            children: Vec::new(),
            label,
            state: vec![0.0; dim],
        });
        if let Some(p) = parent {
            nodes[p].children.push(id);
        }
        id
    };
    let root = push(Level::Root, None, "root".into(), &mut nodes);
    let mut facets = Vec::new();
    let mut facet_index = HashMap::new();
    let mut ideology_index = HashMap::new();
    for d in &spec.domains {
        let dom = push(Level::Domain, Some(root), d.name.clone(), &mut nodes);
        for f in &d.facets {
            let fid = push(Level::Facet, Some(dom), f.code.clone(), &mut nodes);
            facets.push((f.code.clone(), fid));
            facet_index.insert(f.code.clone(), fid);
            for ideo in Ideology::ALL {
                let leaf = push(
                    Level::Ideology,
                    Some(fid),
                    ideology_key(&f.code, ideo),
                    &mut nodes,
                );
                ideology_index.insert((f.code.clone(), ideo), leaf);
            }
        }
    }
    Ok(ConceptTree {
        nodes,
        dim,
        facets,
        facet_index,
        ideology_index,
    })
}

impl ConceptTree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn state(&self, id: usize) -> &[f64] {
        &self.nodes[id].state
    }

    pub fn set_state(&mut self, id: usize, state: Vec<f64>) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::shape(
                "set_state",
                format!("{} vs tree dimension {}", state.len(), self.dim),
            ));
        }
        self.nodes[id].state = state;
        Ok(())
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| n.state.clone()).collect()
    }

    pub fn ids_at(&self, level: Level) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .filter(move |n| n.level == level)
            .map(|n| n.id)
    }

    /// Facet codes with their node ids, in schema order.
    pub fn facets(&self) -> &[(String, usize)] {
        &self.facets
    }

    pub fn facet_codes(&self) -> Vec<String> {
        self.facets.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn facet_node(&self, code: &str) -> Option<usize> {
        self.facet_index.get(code).copied()
    }

    pub fn ideology_node(&self, code: &str, ideology: Ideology) -> Option<usize> {
        self.ideology_index.get(&(code.to_string(), ideology)).copied()
    }

    /// Embedding key for a Facet or Ideology node; `None` for Root/Domain.
    pub fn concept_key(&self, id: usize) -> Option<String> {
        let n = &self.nodes[id];
        match n.level {
            Level::Facet | Level::Ideology => Some(n.label.clone()),
            _ => None,
        }
    }

    /// Checks the structural invariants of a four-level concept tree.
    pub fn validate(&self) -> Result<()> {
        let roots = self.nodes.iter().filter(|n| n.level == Level::Root).count();
        if roots != 1 || self.nodes.first().map(|n| n.level) != Some(Level::Root) {
            return Err(Error::Schema(format!("expected one root at id 0, found {roots}")));
        }
        for n in &self.nodes {
            if n.state.len() != self.dim {
                return Err(Error::Schema(format!("node {} has wrong state dimension", n.id)));
            }
            if let Some(p) = n.parent {
                if self.nodes[p].level.depth() + 1 != n.level.depth() {
                    return Err(Error::Schema(format!("node {} skips a level", n.id)));
                }
            } else if n.level != Level::Root {
                return Err(Error::Schema(format!("node {} has no parent", n.id)));
            }
            match n.level {
                Level::Facet if n.children.len() != 3 => {
                    return Err(Error::Schema(format!("facet {} needs 3 leaves", n.label)))
                }
                Level::Ideology if !n.children.is_empty() => {
                    return Err(Error::Schema(format!("leaf {} has children", n.label)))
                }
                Level::Root | Level::Domain if n.children.is_empty() => {
                    return Err(Error::Schema(format!("inner node {} is a leaf", n.label)))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Sets Facet and Ideology states from their concept embeddings, then each
/// Domain to the mean of its facets and the Root to the mean of its domains.
pub fn init_node_states<E: ConceptEmbeddings + ?Sized>(
    mut tree: ConceptTree,
    embeddings: &E,
) -> Result<ConceptTree> {
    let dim = tree.dim;
    for id in 0..tree.nodes.len() {
        if let Some(key) = tree.concept_key(id) {
            let v = embeddings
                .concept(&key)
                .ok_or_else(|| Error::Embedding(format!("missing concept embedding {key:?}")))?;
            if v.len() != dim {
                return Err(Error::Embedding(format!(
                    "concept {key:?} has dimension {}, tree uses {dim}",
                    v.len()
                )));
            }
            tree.nodes[id].state = v.to_vec();
        }
    }
    for level in [Level::Domain, Level::Root] {
        let ids: Vec<usize> = tree.ids_at(level).collect();
        for id in ids {
            let kids = tree.nodes[id].children.clone();
            let mut mean = vec![0.0; dim];
            for &k in &kids {
                for (m, x) in mean.iter_mut().zip(&tree.nodes[k].state) {
                    *m += x;
                }
            }
            let inv = 1.0 / kids.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            tree.nodes[id].state = mean;
        }
    }
    Ok(tree)
}

/// One `[root, domain, facet, ideology]` path per leaf, in leaf order.
pub fn enumerate_metapaths(tree: &ConceptTree) -> Vec<[usize; 4]> {
    tree.ids_at(Level::Ideology)
        .map(|leaf| {
            let facet = tree.nodes[leaf].parent.expect("leaf has a facet");
            let domain = tree.nodes[facet].parent.expect("facet has a domain");
            let root = tree.nodes[domain].parent.expect("domain has the root");
            [root, domain, facet, leaf]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const ONE_FACET: &str = r#"{"domains":[{"name":"Economy","facets":[
        {"code":"EO","name":"Economic Orientation","facet_concept":"economy",
         "left":"command","center":"mixed","right":"market"}]}]}"#;

    #[test]
    fn default_schema_has_five_domains_and_twelve_facets() {
        let s = SchemaSpec::default_mitweet();
        assert_eq!(s.domains.len(), 5);
        assert_eq!(s.num_facets(), 12);
        let codes = s.facet_codes();
        assert_eq!(codes.first().map(String::as_str), Some("PoR"));
        assert_eq!(codes.last().map(String::as_str), Some("PeR"));
        assert_eq!(
            codes,
            ["PoR", "SS", "EO", "EE", "EP", "CSR", "CV", "DS", "MF", "SD", "JO", "PeR"]
        );
        assert!(s.facet("DS").unwrap().center.starts_with("A moderate position"));
    }

    #[test]
    fn minimal_schema_parses() {
        let s = SchemaSpec::from_json(ONE_FACET).unwrap();
        assert_eq!(s.num_facets(), 1);
        assert_eq!(s.facet("EO").unwrap().right, "market");
    }

    #[test]
    fn duplicate_code_is_rejected() {
        let text = r#"{"domains":[{"name":"E","facets":[
            {"code":"EO","facet_concept":"a","left":"b","center":"c","right":"d"},
            {"code":"EO","facet_concept":"a","left":"b","center":"c","right":"d"}]}]}"#;
        let err = SchemaSpec::from_json(text).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn missing_concept_is_rejected() {
        let text = r#"{"domains":[{"name":"E","facets":[
            {"code":"EO","facet_concept":"a","left":"b","right":"d"}]}]}"#;
        let err = SchemaSpec::from_json(text).unwrap_err();
        assert!(err.to_string().contains("center"), "{err}");
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(SchemaSpec::from_json("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn node_counts() {
        let t = build_tree(&SchemaSpec::default_mitweet(), 768).unwrap();
        assert_eq!(t.len(), 1 + 5 + 12 + 36);
        t.validate().unwrap();
        let small = build_tree(&SchemaSpec::from_json(ONE_FACET).unwrap(), 4).unwrap();
        assert_eq!(small.len(), 6);
        small.validate().unwrap();
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(build_tree(&SchemaSpec::default_mitweet(), 7).is_err());
    }

    #[test]
    fn level_counts_sum_and_edges_step_one_level() {
        let t = build_tree(&SchemaSpec::default_mitweet(), 2).unwrap();
        let total: usize = [Level::Root, Level::Domain, Level::Facet, Level::Ideology]
            .iter()
            .map(|&l| t.ids_at(l).count())
            .sum();
        assert_eq!(total, t.len());
        for n in t.nodes() {
            for &c in &n.children {
                assert_eq!(t.node(c).level.depth(), n.level.depth() + 1);
                assert_eq!(t.node(c).parent, Some(n.id));
            }
        }
    }

    #[test]
    fn domain_state_is_mean_of_facets() {
        let text = r#"{"domains":[{"name":"D","facets":[
            {"code":"A","facet_concept":"a","left":"l","center":"c","right":"r"},
            {"code":"B","facet_concept":"b","left":"l","center":"c","right":"r"}]}]}"#;
        let spec = SchemaSpec::from_json(text).unwrap();
        let mut emb: HashMap<String, Vec<f64>> = HashMap::new();
        emb.insert("A".into(), vec![1.0, 0.0]);
        emb.insert("B".into(), vec![3.0, 0.0]);
        for code in ["A", "B"] {
            for i in Ideology::ALL {
                emb.insert(ideology_key(code, i), vec![9.0, 9.0]);
            }
        }
        let t = init_node_states(build_tree(&spec, 2).unwrap(), &emb).unwrap();
        assert_eq!(t.state(1), &[2.0, 0.0]);
        assert_eq!(t.state(0), &[2.0, 0.0]);
    }

    #[test]
    fn zero_embeddings_give_zero_states() {
        let spec = SchemaSpec::default_mitweet();
        let tree = build_tree(&spec, 4).unwrap();
        let emb: HashMap<String, Vec<f64>> = (0..tree.len())
            .filter_map(|id| tree.concept_key(id))
            .map(|k| (k, vec![0.0; 4]))
            .collect();
        let t = init_node_states(tree, &emb).unwrap();
        assert!(t.nodes().iter().all(|n| n.state.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn missing_or_misshaped_embeddings_are_errors() {
        let spec = SchemaSpec::from_json(ONE_FACET).unwrap();
        let mut emb: HashMap<String, Vec<f64>> = HashMap::new();
        emb.insert("EO".into(), vec![1.0, 2.0]);
        let err = init_node_states(build_tree(&spec, 2).unwrap(), &emb).unwrap_err();
        assert!(err.to_string().contains("EO:L"), "{err}");
        emb.insert("EO".into(), vec![1.0, 2.0, 3.0, 4.0]);
        for i in Ideology::ALL {
            emb.insert(ideology_key("EO", i), vec![0.0, 0.0]);
        }
        assert!(init_node_states(build_tree(&spec, 2).unwrap(), &emb).is_err());
    }

    #[test]
    fn metapaths_cover_every_leaf() {
        let t = build_tree(&SchemaSpec::default_mitweet(), 2).unwrap();
        let paths = enumerate_metapaths(&t);
        assert_eq!(paths.len(), 36);
        for p in &paths {
            assert_eq!(p[0], t.root());
            for w in p.windows(2) {
                assert_eq!(t.node(w[1]).level.depth(), t.node(w[0]).level.depth() + 1);
            }
        }
        let one = build_tree(&SchemaSpec::from_json(ONE_FACET).unwrap(), 2).unwrap();
        assert_eq!(enumerate_metapaths(&one).len(), 3);
    }
}
