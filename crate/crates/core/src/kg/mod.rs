//! Signed physics knowledge graph: forward and backward causal traversal
//! with conditional edges, and seeded perturbation operators.
//!
//! Graph documents are TOML:
//!
//! ```toml
//! [[nodes]]
//! name = "Q_rad"
//! role = "disturbance"
//!
//! [[edges]]
//! src = "Q_rad"
//! dst = "T"
//! sign = "+"
//!
//! [[edges]]
//! src = "u_V"
//! dst = "Hm"
//! sign = "conditional"
//! when_true = "-"
//! condition = "H_out < H_in"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_DEPTH: usize = 4;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("graph serialization error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("cannot access graph file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("edge {src} -> {dst} references unknown node `{missing}`")]
    DanglingEndpoint {
        src: String,
        dst: String,
        missing: String,
    },
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(String, String),
    #[error("edge {0} -> {1}: {2}")]
    InvalidEdge(String, String, String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    State,
    Input,
    Disturbance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeSign {
    Positive,
    Negative,
}

impl EdgeSign {
    pub fn factor(self) -> f64 {
        match self {
            EdgeSign::Positive => 1.0,
            EdgeSign::Negative => -1.0,
        }
    }

    pub fn negate(self) -> Self {
        match self {
            EdgeSign::Positive => EdgeSign::Negative,
            EdgeSign::Negative => EdgeSign::Positive,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            EdgeSign::Positive => "+",
            EdgeSign::Negative => "-",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "+" => Some(EdgeSign::Positive),
            "-" => Some(EdgeSign::Negative),
            _ => None,
        }
    }
}

/// Edge label: a fixed sign, or a sign that holds when `condition` is true
/// and flips when it is false.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeLabel {
    Fixed(EdgeSign),
    Conditional { when_true: EdgeSign, condition: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub label: EdgeLabel,
}

impl Edge {
    pub fn is_conditional(&self) -> bool {
        matches!(self.label, EdgeLabel::Conditional { .. })
    }

    pub fn describe(&self) -> String {
        match &self.label {
            EdgeLabel::Fixed(s) => format!("{} -({})-> {}", self.src, s.symbol(), self.dst),
            EdgeLabel::Conditional { when_true, condition } => format!(
                "{} -({} if {})-> {}",
                self.src,
                when_true.symbol(),
                condition,
                self.dst
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeSign {
    Positive,
    Negative,
    Indeterminate,
}

impl CompositeSign {
    pub fn from_sign(s: EdgeSign) -> Self {
        match s {
            EdgeSign::Positive => CompositeSign::Positive,
            EdgeSign::Negative => CompositeSign::Negative,
        }
    }

    /// Sign product; indeterminate absorbs.
    pub fn compose(self, other: CompositeSign) -> CompositeSign {
        use CompositeSign::*;
        match (self, other) {
            (Indeterminate, _) | (_, Indeterminate) => Indeterminate,
            (a, b) if a == b => Positive,
            _ => Negative,
        }
    }

    pub fn factor(self) -> Option<f64> {
        match self {
            CompositeSign::Positive => Some(1.0),
            CompositeSign::Negative => Some(-1.0),
            CompositeSign::Indeterminate => None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CompositeSign::Positive => "+",
            CompositeSign::Negative => "-",
            CompositeSign::Indeterminate => "?",
        }
    }
}

impl fmt::Display for CompositeSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A directed path with the product of its edge signs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CausalChain {
    pub path: Vec<String>,
    pub composite_sign: CompositeSign,
    /// Edges as `src -(sign)-> dst` strings, in path order.
    pub edge_refs: Vec<String>,
}

impl CausalChain {
    pub fn origin(&self) -> &str {
        &self.path[0]
    }

    pub fn end(&self) -> &str {
        self.path.last().expect("non-empty path")
    }

    pub fn render(&self) -> String {
        format!("{} ({})", self.path.join(" -> "), self.composite_sign)
    }

    /// Chain `self` followed by `other`, which must start where `self` ends.
    pub fn concat(&self, other: &CausalChain) -> Option<CausalChain> {
        if self.end() != other.origin() {
            return None;
        }
        let mut path = self.path.clone();
        path.extend(other.path.iter().skip(1).cloned());
        let mut edge_refs = self.edge_refs.clone();
        edge_refs.extend(other.edge_refs.iter().cloned());
        Some(CausalChain {
            path,
            composite_sign: self.composite_sign.compose(other.composite_sign),
            edge_refs,
        })
    }
}

type ConditionFn = Arc<dyn Fn(&BTreeMap<String, f64>) -> Option<bool> + Send + Sync>;

/// Evaluators for conditional-edge predicates, keyed by condition text.
#[derive(Clone, Default)]
pub struct ConditionRegistry {
    evaluators: BTreeMap<String, ConditionFn>,
}

impl fmt::Debug for ConditionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.evaluators.keys()).finish()
    }
}

impl ConditionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        condition: impl Into<String>,
        eval: impl Fn(&BTreeMap<String, f64>) -> Option<bool> + Send + Sync + 'static,
    ) {
        self.evaluators.insert(condition.into(), Arc::new(eval));
    }

    /// Register `condition` as `values[lhs] < values[rhs]`.
    pub fn register_comparison(&mut self, condition: impl Into<String>, lhs: &str, rhs: &str) {
        let (lhs, rhs) = (lhs.to_string(), rhs.to_string());
        self.register(condition, move |v| Some(v.get(&lhs)? < v.get(&rhs)?));
    }

    pub fn evaluate(&self, condition: &str, values: &BTreeMap<String, f64>) -> Option<bool> {
        self.evaluators.get(condition).and_then(|f| f(values))
    }

    /// Effective sign of `edge` in the context `values`; `None` when the
    /// edge is conditional and its condition cannot be evaluated.
    pub fn resolve(&self, edge: &Edge, values: &BTreeMap<String, f64>) -> Option<EdgeSign> {
        match &edge.label {
            EdgeLabel::Fixed(s) => Some(*s),
            EdgeLabel::Conditional { when_true, condition } => {
                self.evaluate(condition, values)
                    .map(|holds| if holds { *when_true } else { when_true.negate() })
            }
        }
    }
}

/// Query context for resolving conditional edges.
#[derive(Clone, Copy, Debug)]
pub struct TraceContext<'a> {
    pub registry: &'a ConditionRegistry,
    pub values: &'a BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SignedKnowledgeGraph {
    nodes: BTreeMap<String, NodeRole>,
    edges: Vec<Edge>,
}

impl SignedKnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, role: NodeRole) -> Result<(), GraphError> {
        if self.nodes.contains_key(name) {
            return Err(GraphError::DuplicateNode(name.to_string()));
        }
        self.nodes.insert(name.to_string(), role);
        Ok(())
    }

    fn check_edge(&self, src: &str, dst: &str) -> Result<(), GraphError> {
        for end in [src, dst] {
            if !self.nodes.contains_key(end) {
                return Err(GraphError::DanglingEndpoint {
                    src: src.to_string(),
                    dst: dst.to_string(),
                    missing: end.to_string(),
                });
            }
        }
        if src == dst {
            return Err(GraphError::SelfLoop(src.to_string()));
        }
        if self.edges.iter().any(|e| e.src == src && e.dst == dst) {
            return Err(GraphError::DuplicateEdge(src.to_string(), dst.to_string()));
        }
        Ok(())
    }

    pub fn add_edge(&mut self, src: &str, dst: &str, sign: EdgeSign) -> Result<(), GraphError> {
        self.check_edge(src, dst)?;
        self.edges.push(Edge {
            src: src.to_string(),
            dst: dst.to_string(),
            label: EdgeLabel::Fixed(sign),
        });
        Ok(())
    }

    pub fn add_conditional_edge(
        &mut self,
        src: &str,
        dst: &str,
        when_true: EdgeSign,
        condition: &str,
    ) -> Result<(), GraphError> {
        self.check_edge(src, dst)?;
        if condition.trim().is_empty() {
            return Err(GraphError::InvalidEdge(
                src.to_string(),
                dst.to_string(),
                "conditional edge needs a condition".into(),
            ));
        }
        self.edges.push(Edge {
            src: src.to_string(),
            dst: dst.to_string(),
            label: EdgeLabel::Conditional {
                when_true,
                condition: condition.to_string(),
            },
        });
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, NodeRole)> {
        self.nodes.iter().map(|(n, r)| (n.as_str(), *r))
    }

    pub fn role(&self, node: &str) -> Option<NodeRole> {
        self.nodes.get(node).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains_key(node)
    }

    fn edge_sign(&self, edge: &Edge, ctx: Option<&TraceContext>) -> CompositeSign {
        match (&edge.label, ctx) {
            (EdgeLabel::Fixed(s), _) => CompositeSign::from_sign(*s),
            (EdgeLabel::Conditional { .. }, Some(c)) => c
                .registry
                .resolve(edge, c.values)
                .map_or(CompositeSign::Indeterminate, CompositeSign::from_sign),
            (EdgeLabel::Conditional { .. }, None) => CompositeSign::Indeterminate,
        }
    }

    /// Edges sorted canonically so traversal does not depend on insertion order.
    fn adjacency(&self, forward: bool) -> BTreeMap<&str, Vec<&Edge>> {
        let mut adj: BTreeMap<&str, Vec<&Edge>> = BTreeMap::new();
        for e in &self.edges {
            let key = if forward { e.src.as_str() } else { e.dst.as_str() };
            adj.entry(key).or_default().push(e);
        }
        for list in adj.values_mut() {
            list.sort();
        }
        adj
    }

    fn chain_from(&self, path: &[&str], edges: &[&Edge], ctx: Option<&TraceContext>) -> CausalChain {
        let composite = edges
            .iter()
            .fold(CompositeSign::Positive, |acc, e| acc.compose(self.edge_sign(e, ctx)));
        CausalChain {
            path: path.iter().map(|s| s.to_string()).collect(),
            composite_sign: composite,
            edge_refs: edges.iter().map(|e| e.describe()).collect(),
        }
    }
}

/// All simple paths of at most `max_depth` edges from any of `sources` to
/// any state node, sorted lexicographically by path.
pub fn forward_trace(
    g: &SignedKnowledgeGraph,
    sources: &BTreeSet<String>,
    max_depth: usize,
    ctx: Option<&TraceContext>,
) -> Vec<CausalChain> {
    let adj = g.adjacency(true);
    let mut out = Vec::new();
    for src in sources {
        if !g.contains(src) {
            continue;
        }
        let mut path = vec![src.as_str()];
        let mut edges: Vec<&Edge> = Vec::new();
        dfs(g, &adj, true, max_depth, &mut path, &mut edges, &mut out, ctx, &|n| {
            g.role(n) == Some(NodeRole::State)
        });
    }
    out.sort();
    out.dedup();
    out
}

/// All simple paths of at most `max_depth` edges ending at `target` that
/// originate at a disturbance or input node.
pub fn backward_trace(
    g: &SignedKnowledgeGraph,
    target: &str,
    max_depth: usize,
    ctx: Option<&TraceContext>,
) -> Result<Vec<CausalChain>, GraphError> {
    if !g.contains(target) {
        return Err(GraphError::UnknownNode(target.to_string()));
    }
    let adj = g.adjacency(false);
    let mut reversed = Vec::new();
    let mut path = vec![target];
    let mut edges: Vec<&Edge> = Vec::new();
    dfs(g, &adj, false, max_depth, &mut path, &mut edges, &mut reversed, ctx, &|n| {
        matches!(g.role(n), Some(NodeRole::Disturbance | NodeRole::Input))
    });
    let mut out: Vec<CausalChain> = reversed
        .into_iter()
        .map(|mut c| {
            c.path.reverse();
            c.edge_refs.reverse();
            c
        })
        .collect();
    out.sort();
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs<'g>(
    g: &'g SignedKnowledgeGraph,
    adj: &BTreeMap<&'g str, Vec<&'g Edge>>,
    forward: bool,
    max_depth: usize,
    path: &mut Vec<&'g str>,
    edges: &mut Vec<&'g Edge>,
    out: &mut Vec<CausalChain>,
    ctx: Option<&TraceContext>,
    accept: &dyn Fn(&str) -> bool,
) {
    if edges.len() >= max_depth {
        return;
    }
    let here = *path.last().expect("non-empty");
    let Some(next_edges) = adj.get(here) else {
        return;
    };
    for &e in next_edges {
        let next = if forward { e.dst.as_str() } else { e.src.as_str() };
        if path.contains(&next) {
            continue;
        }
        path.push(next);
        edges.push(e);
        if accept(next) {
            out.push(g.chain_from(path, edges, ctx));
        }
        dfs(g, adj, forward, max_depth, path, edges, out, ctx, accept);
        path.pop();
        edges.pop();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op", content = "fraction")]
pub enum Perturbation {
    Remove(f64),
    Flip(f64),
}

impl Perturbation {
    pub fn fraction(self) -> f64 {
        match self {
            Perturbation::Remove(p) | Perturbation::Flip(p) => p,
        }
    }
}

fn affected_count(p: f64, n: usize) -> usize {
    let raw = p.clamp(0.0, 1.0) * n as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Seeded copy of `g` with `ceil(p |E|)` edges removed, or that many
/// non-conditional edges negated.
pub fn perturb(g: &SignedKnowledgeGraph, op: Perturbation, seed: u64) -> SignedKnowledgeGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = affected_count(op.fraction(), g.edges.len());
    let mut out = g.clone();
    match op {
        Perturbation::Remove(_) => {
            let chosen: BTreeSet<usize> = rand::seq::index::sample(&mut rng, g.edges.len(), k).into_iter().collect();
            out.edges = g
                .edges
                .iter()
                .enumerate()
                .filter(|(i, _)| !chosen.contains(i))
                .map(|(_, e)| e.clone())
                .collect();
        }
        Perturbation::Flip(_) => {
            let fixed: Vec<usize> = (0..g.edges.len()).filter(|&i| !g.edges[i].is_conditional()).collect();
            let k = k.min(fixed.len());
            for j in rand::seq::index::sample(&mut rng, fixed.len(), k) {
                let e = &mut out.edges[fixed[j]];
                if let EdgeLabel::Fixed(s) = e.label {
                    e.label = EdgeLabel::Fixed(s.negate());
                }
            }
        }
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDoc {
    name: String,
    role: NodeRole,
}

#[derive(Debug, Serialize, Deserialize)]
struct EdgeDoc {
    src: String,
    dst: String,
    sign: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    when_true: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct GraphDoc {
    #[serde(default)]
    nodes: Vec<NodeDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
}

/// Parse and validate a graph document.
pub fn load_graph(text: &str) -> Result<SignedKnowledgeGraph, GraphError> {
    let doc: GraphDoc = toml::from_str(text)?;
    let mut g = SignedKnowledgeGraph::new();
    for n in &doc.nodes {
        g.add_node(&n.name, n.role)?;
    }
    for e in &doc.edges {
        let invalid = |msg: &str| GraphError::InvalidEdge(e.src.clone(), e.dst.clone(), msg.to_string());
        match e.sign.as_str() {
            "conditional" => {
                let when_true = e
                    .when_true
                    .as_deref()
                    .and_then(EdgeSign::parse)
                    .ok_or_else(|| invalid("conditional edge needs when_true = \"+\" or \"-\""))?;
                let condition = e.condition.as_deref().ok_or_else(|| invalid("conditional edge needs a condition"))?;
                g.add_conditional_edge(&e.src, &e.dst, when_true, condition)?;
            }
            s => {
                let sign = EdgeSign::parse(s).ok_or_else(|| invalid("sign must be \"+\", \"-\" or \"conditional\""))?;
                g.add_edge(&e.src, &e.dst, sign)?;
            }
        }
    }
    Ok(g)
}

pub fn save_graph(g: &SignedKnowledgeGraph) -> Result<String, GraphError> {
    let doc = GraphDoc {
        nodes: g
            .nodes
            .iter()
            .map(|(name, role)| NodeDoc {
                name: name.clone(),
                role: *role,
            })
            .collect(),
        edges: g
            .edges
            .iter()
            .map(|e| match &e.label {
                EdgeLabel::Fixed(s) => EdgeDoc {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    sign: s.symbol().to_string(),
                    when_true: None,
                    condition: None,
                },
                EdgeLabel::Conditional { when_true, condition } => EdgeDoc {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    sign: "conditional".to_string(),
                    when_true: Some(when_true.symbol().to_string()),
                    condition: Some(condition.clone()),
                },
            })
            .collect(),
    };
    Ok(toml::to_string(&doc)?)
}

pub fn load_graph_file(path: &Path) -> Result<SignedKnowledgeGraph, GraphError> {
    let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_graph(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greenhouse::{greenhouse_conditions, greenhouse_graph};

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn greenhouse_graph_round_trips() {
        let g = greenhouse_graph();
        let text = save_graph(&g).unwrap();
        assert!(text.contains("src = \"Q_rad\""));
        let back = load_graph(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(save_graph(&back).unwrap(), text);
    }

    #[test]
    fn dangling_endpoint_is_rejected() {
        let text = "[[nodes]]\nname = \"T\"\nrole = \"state\"\n\n[[edges]]\nsrc = \"X\"\ndst = \"T\"\nsign = \"+\"\n";
        match load_graph(text) {
            Err(GraphError::DanglingEndpoint { missing, .. }) => assert_eq!(missing, "X"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_node_and_self_loop_are_rejected() {
        let dup = "[[nodes]]\nname = \"T\"\nrole = \"state\"\n[[nodes]]\nname = \"T\"\nrole = \"input\"\n";
        assert!(matches!(load_graph(dup), Err(GraphError::DuplicateNode(_))));
        let mut g = SignedKnowledgeGraph::new();
        g.add_node("T", NodeRole::State).unwrap();
        assert!(matches!(g.add_edge("T", "T", EdgeSign::Positive), Err(GraphError::SelfLoop(_))));
    }

    #[test]
    fn conditional_edge_requires_condition() {
        let text = "[[nodes]]\nname = \"a\"\nrole = \"input\"\n[[nodes]]\nname = \"b\"\nrole = \"state\"\n[[edges]]\nsrc = \"a\"\ndst = \"b\"\nsign = \"conditional\"\nwhen_true = \"-\"\n";
        assert!(matches!(load_graph(text), Err(GraphError::InvalidEdge(..))));
    }

    #[test]
    fn empty_document_is_an_empty_graph() {
        let g = load_graph("").unwrap();
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.nodes().count(), 0);
    }

    #[test]
    fn solar_radiation_warms_the_air() {
        let g = greenhouse_graph();
        let chains = forward_trace(&g, &set(&["Q_rad"]), DEFAULT_MAX_DEPTH, None);
        let qt = chains.iter().find(|c| c.path == ["Q_rad", "T"]).unwrap();
        assert_eq!(qt.composite_sign, CompositeSign::Positive);
        assert!(forward_trace(&g, &BTreeSet::new(), 4, None).is_empty());
    }

    #[test]
    fn backward_from_temperature_finds_drivers() {
        let g = greenhouse_graph();
        let chains = backward_trace(&g, "T", DEFAULT_MAX_DEPTH, None).unwrap();
        let sign_of = |o: &str| chains.iter().find(|c| c.path == [o, "T"]).map(|c| c.composite_sign);
        assert_eq!(sign_of("T_out"), Some(CompositeSign::Positive));
        assert_eq!(sign_of("u_Qh"), Some(CompositeSign::Positive));
        assert_eq!(sign_of("u_V"), Some(CompositeSign::Negative));
        assert!(matches!(backward_trace(&g, "nope", 4, None), Err(GraphError::UnknownNode(_))));
    }

    #[test]
    fn conditional_edges_resolve_only_with_context() {
        let g = greenhouse_graph();
        let chains = backward_trace(&g, "Hm", 4, None).unwrap();
        let uv = chains.iter().find(|c| c.path == ["u_V", "Hm"]).unwrap();
        assert_eq!(uv.composite_sign, CompositeSign::Indeterminate);
        let reg = greenhouse_conditions();
        let mut values = BTreeMap::new();
        values.insert("H_out".to_string(), 60.0);
        values.insert("Hm".to_string(), 80.0);
        let ctx = TraceContext { registry: &reg, values: &values };
        let chains = backward_trace(&g, "Hm", 4, Some(&ctx)).unwrap();
        let uv = chains.iter().find(|c| c.path == ["u_V", "Hm"]).unwrap();
        assert_eq!(uv.composite_sign, CompositeSign::Negative);
        values.insert("H_out".to_string(), 95.0);
        let ctx = TraceContext { registry: &reg, values: &values };
        let chains = backward_trace(&g, "Hm", 4, Some(&ctx)).unwrap();
        let uv = chains.iter().find(|c| c.path == ["u_V", "Hm"]).unwrap();
        assert_eq!(uv.composite_sign, CompositeSign::Positive);
    }

    #[test]
    fn two_edge_chain_multiplies_signs() {
        let mut g = SignedKnowledgeGraph::new();
        g.add_node("a", NodeRole::Disturbance).unwrap();
        g.add_node("b", NodeRole::State).unwrap();
        g.add_node("c", NodeRole::State).unwrap();
        g.add_edge("a", "b", EdgeSign::Positive).unwrap();
        g.add_edge("b", "c", EdgeSign::Negative).unwrap();
        let chains = forward_trace(&g, &set(&["a"]), 4, None);
        let ac = chains.iter().find(|c| c.path == ["a", "b", "c"]).unwrap();
        assert_eq!(ac.composite_sign, CompositeSign::Negative);
        let ab = chains.iter().find(|c| c.path == ["a", "b"]).unwrap();
        let bc = forward_trace(&g, &set(&["b"]), 4, None).into_iter().find(|c| c.path == ["b", "c"]).unwrap();
        assert_eq!(ab.concat(&bc).unwrap(), *ac);
    }

    #[test]
    fn isolated_node_has_no_chains() {
        let mut g = greenhouse_graph();
        g.add_node("lonely", NodeRole::State).unwrap();
        assert!(backward_trace(&g, "lonely", 4, None).unwrap().is_empty());
    }

    #[test]
    fn depth_bound_is_respected() {
        let g = greenhouse_graph();
        let deep = backward_trace(&g, "B", 4, None).unwrap();
        assert!(deep.iter().any(|c| c.path == ["u_C", "C", "B"]));
        let shallow = backward_trace(&g, "B", 1, None).unwrap();
        assert!(shallow.iter().all(|c| c.path.len() == 2));
    }

    fn chain_graph(n_edges: usize) -> SignedKnowledgeGraph {
        let mut g = SignedKnowledgeGraph::new();
        for i in 0..=n_edges {
            g.add_node(&format!("n{i:02}"), NodeRole::State).unwrap();
        }
        for i in 0..n_edges {
            g.add_edge(&format!("n{i:02}"), &format!("n{:02}", i + 1), EdgeSign::Positive).unwrap();
        }
        g
    }

    #[test]
    fn perturbation_counts_use_ceiling() {
        let g = chain_graph(20);
        assert_eq!(perturb(&g, Perturbation::Remove(0.2), 1).edge_count(), 16);
        assert_eq!(perturb(&g, Perturbation::Remove(0.0), 1), g);
        assert_eq!(perturb(&g, Perturbation::Remove(1.0), 1).edge_count(), 0);
        let flipped = perturb(&g, Perturbation::Flip(0.2), 1);
        let changed = g.edges().iter().zip(flipped.edges()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 4);
        assert_eq!(perturb(&g, Perturbation::Flip(0.25), 9), perturb(&g, Perturbation::Flip(0.25), 9));
    }

    #[test]
    fn flips_never_touch_conditional_edges() {
        let g = greenhouse_graph();
        let flipped = perturb(&g, Perturbation::Flip(1.0), 3);
        for (a, b) in g.edges().iter().zip(flipped.edges()) {
            if a.is_conditional() {
                assert_eq!(a, b);
            } else {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn traversal_is_invariant_under_edge_order() {
        let g = greenhouse_graph();
        let mut shuffled = SignedKnowledgeGraph::new();
        for (n, r) in g.nodes() {
            shuffled.add_node(n, r).unwrap();
        }
        for e in g.edges().iter().rev() {
            match &e.label {
                EdgeLabel::Fixed(s) => shuffled.add_edge(&e.src, &e.dst, *s).unwrap(),
                EdgeLabel::Conditional { when_true, condition } => {
                    shuffled.add_conditional_edge(&e.src, &e.dst, *when_true, condition).unwrap()
                }
            }
        }
        let sources = set(&["Q_rad", "T_out", "u_V"]);
        assert_eq!(forward_trace(&g, &sources, 4, None), forward_trace(&shuffled, &sources, 4, None));
        assert_eq!(backward_trace(&g, "B", 4, None).unwrap(), backward_trace(&shuffled, "B", 4, None).unwrap());
    }
}
