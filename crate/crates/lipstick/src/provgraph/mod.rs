//! The provenance-graph store.
//!
//! A graph holds p-nodes (provenance) and v-nodes (values), labelled with
//! tokens, semiring operations (`+`, `·`, `δ`), tensors, aggregates,
//! constants, black-box calls, module invocations, or meta nodes of
//! zoomed-out views. Edges run from predecessors to the node derived from
//! them; a node is always created after its predecessors, so the graph is a
//! DAG by construction. Parallel edges are kept (a self-join contributes the
//! same predecessor twice).

mod poly;
mod serial;

pub use poly::{eval_polynomial, Monomial, PolyAtom, Polynomial, PolynomialOptions};
pub use serial::GraphParseError;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::relmodel::AtomValue;

/// Node identifier; dense in creation order for freshly built graphs.
pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKind {
    /// Provenance node.
    P,
    /// Value node.
    V,
}

/// Coarse role of a node: workflow/module input, module output, module
/// state, module invocation, internal, or zoom meta node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeClass {
    Input,
    Output,
    State,
    Module,
    Plain,
    Meta,
}

impl NodeClass {
    pub fn tag(&self) -> &'static str {
        match self {
            NodeClass::Input => "i",
            NodeClass::Output => "o",
            NodeClass::State => "s",
            NodeClass::Module => "m",
            NodeClass::Plain => "plain",
            NodeClass::Meta => "meta",
        }
    }

    pub fn from_tag(tag: &str) -> Option<NodeClass> {
        Some(match tag {
            "i" => NodeClass::Input,
            "o" => NodeClass::Output,
            "s" => NodeClass::State,
            "m" => NodeClass::Module,
            "plain" => NodeClass::Plain,
            "meta" => NodeClass::Meta,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggOp {
    Sum,
    Count,
    Min,
    Max,
}

impl AggOp {
    pub fn name(&self) -> &'static str {
        match self {
            AggOp::Sum => "SUM",
            AggOp::Count => "COUNT",
            AggOp::Min => "MIN",
            AggOp::Max => "MAX",
        }
    }

    pub fn from_name(s: &str) -> Option<AggOp> {
        Some(match s {
            "SUM" => AggOp::Sum,
            "COUNT" => AggOp::Count,
            "MIN" => AggOp::Min,
            "MAX" => AggOp::Max,
            _ => return None,
        })
    }
}

impl fmt::Display for AggOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of one module invocation: module name, workflow node name, and
/// the per-module invocation index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct InvocationKey {
    pub module: String,
    pub node: String,
    pub index: u64,
}

impl fmt::Display for InvocationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.module, self.node, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Label {
    /// Base-fact token; its token id is the node id, the string is a
    /// human-readable display name.
    Token(String),
    Plus,
    Times,
    Delta,
    Tensor,
    Agg(AggOp),
    Bb(String),
    Const(AtomValue),
    Invocation(InvocationKey),
    Meta(InvocationKey),
}

impl Label {
    /// Display key used in stats, e.g. `Agg(COUNT)` or `BB(CalcBid)`.
    pub fn stat_key(&self) -> String {
        match self {
            Label::Token(_) => "Token".into(),
            Label::Plus => "Plus".into(),
            Label::Times => "Times".into(),
            Label::Delta => "Delta".into(),
            Label::Tensor => "Tensor".into(),
            Label::Agg(op) => format!("Agg({op})"),
            Label::Bb(name) => format!("BB({name})"),
            Label::Const(_) => "Const".into(),
            Label::Invocation(_) => "Inv".into(),
            Label::Meta(_) => "Meta".into(),
        }
    }

    fn default_kind(&self) -> NodeKind {
        match self {
            Label::Tensor | Label::Agg(_) | Label::Const(_) => NodeKind::V,
            _ => NodeKind::P,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub class: NodeClass,
    pub label: Label,
}

/// Specification of a node to append via [`ProvGraph::extend`].
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub class: NodeClass,
    pub label: Label,
    /// Overrides the label's default kind; only meaningful for BB nodes,
    /// which may be provenance or value nodes depending on what they feed.
    pub kind: Option<NodeKind>,
}

impl NodeSpec {
    pub fn plain(label: Label) -> Self {
        NodeSpec { class: NodeClass::Plain, label, kind: None }
    }

    pub fn classed(class: NodeClass, label: Label) -> Self {
        NodeSpec { class, label, kind: None }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("{label} node requires at least one predecessor")]
    MissingPredecessors { label: String },
    #[error("token nodes cannot have predecessors")]
    TokenWithPredecessors,
    #[error("token class must be i or s")]
    BadTokenClass,
    #[error("tensor nodes take exactly one value and one provenance predecessor")]
    BadTensorShape,
    #[error("node {0} is a value node, not a provenance node")]
    NodeIsValue(NodeId),
    #[error("node {0} has no polynomial semantics")]
    NoPolynomialSemantics(NodeId),
}

/// Exact node/edge counts, split by label and class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GraphStats {
    pub node_count: u64,
    pub edge_count: u64,
    pub by_label: BTreeMap<String, u64>,
    pub by_class: BTreeMap<String, u64>,
}

#[derive(Debug, Clone)]
struct Entry {
    node: ProvNode,
    preds: Vec<NodeId>,
    succs: Vec<NodeId>,
}

#[derive(Debug, Clone, Default)]
pub struct ProvGraph {
    entries: BTreeMap<NodeId, Entry>,
    /// Relation instance ids are interned; bindings key the intern id and
    /// the tuple ordinal.
    instance_names: Vec<String>,
    instance_ids: BTreeMap<String, u32>,
    bindings: BTreeMap<(u32, u64), NodeId>,
    /// Value constants are shared: one Const node per distinct value.
    const_index: BTreeMap<AtomValue, NodeId>,
    next_id: NodeId,
    /// Set on materialized zoom views; base graphs are not views.
    is_view: bool,
}

impl ProvGraph {
    pub fn new() -> Self {
        ProvGraph::default()
    }

    pub fn is_view(&self) -> bool {
        self.is_view
    }

    pub(crate) fn mark_view(&mut self) {
        self.is_view = true;
    }

    pub fn node_count(&self) -> usize {
        self.entries.len()
    }

    pub fn edge_count(&self) -> usize {
        self.entries.values().map(|e| e.preds.len()).sum()
    }

    pub fn node(&self, id: NodeId) -> Option<&ProvNode> {
        self.entries.get(&id).map(|e| &e.node)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn preds(&self, id: NodeId) -> &[NodeId] {
        self.entries.get(&id).map(|e| e.preds.as_slice()).unwrap_or(&[])
    }

    pub fn succs(&self, id: NodeId) -> &[NodeId] {
        self.entries.get(&id).map(|e| e.succs.as_slice()).unwrap_or(&[])
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProvNode> {
        self.entries.values().map(|e| &e.node)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.keys().copied()
    }

    /// All edges as (src, dst) pairs, one per parallel edge.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.entries
            .iter()
            .flat_map(|(dst, e)| e.preds.iter().map(move |src| (*src, *dst)))
    }

    /// Tuple bindings as (relation instance id, tuple ordinal, node),
    /// sorted by instance id then ordinal.
    pub fn bindings(&self) -> Vec<(&str, u64, NodeId)> {
        let mut out: Vec<(&str, u64, NodeId)> = self
            .bindings
            .iter()
            .map(|((inst, ordinal), node)| {
                (self.instance_names[*inst as usize].as_str(), *ordinal, *node)
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn binding_count(&self) -> usize {
        self.bindings.len()
    }

    pub fn bind(&mut self, instance: &str, ordinal: u64, node: NodeId) -> Result<(), GraphError> {
        match self.node(node) {
            None => return Err(GraphError::UnknownNode(node)),
            // tuple bindings always target provenance nodes
            Some(n) if n.kind == NodeKind::V => return Err(GraphError::NodeIsValue(node)),
            Some(_) => {}
        }
        let id = match self.instance_ids.get(instance) {
            Some(id) => *id,
            None => {
                let id = self.instance_names.len() as u32;
                self.instance_names.push(instance.to_string());
                self.instance_ids.insert(instance.to_string(), id);
                id
            }
        };
        self.bindings.insert((id, ordinal), node);
        Ok(())
    }

    /// Creates a new base-fact token node. Tokens have in-degree 0 and are
    /// class `i` (workflow input) or `s` (module state).
    pub fn fresh_token(
        &mut self,
        class: NodeClass,
        display_name: impl Into<String>,
    ) -> Result<NodeId, GraphError> {
        if !matches!(class, NodeClass::Input | NodeClass::State) {
            return Err(GraphError::BadTokenClass);
        }
        self.push_node(NodeKind::P, class, Label::Token(display_name.into()), &[])
    }

    /// Appends a node and edges from every predecessor. The single mutation
    /// entry point: all construction rules go through here.
    pub fn extend(&mut self, spec: NodeSpec, preds: &[NodeId]) -> Result<NodeId, GraphError> {
        for p in preds {
            if !self.contains(*p) {
                return Err(GraphError::UnknownNode(*p));
            }
        }
        match &spec.label {
            Label::Token(_) => {
                if !preds.is_empty() {
                    return Err(GraphError::TokenWithPredecessors);
                }
                if !matches!(spec.class, NodeClass::Input | NodeClass::State) {
                    return Err(GraphError::BadTokenClass);
                }
            }
            Label::Plus | Label::Times | Label::Delta => {
                if preds.is_empty() {
                    return Err(GraphError::MissingPredecessors {
                        label: spec.label.stat_key(),
                    });
                }
            }
            Label::Tensor => {
                if preds.len() != 2 {
                    return Err(GraphError::BadTensorShape);
                }
                let kinds: Vec<NodeKind> =
                    preds.iter().map(|p| self.entries[p].node.kind).collect();
                if !(kinds.contains(&NodeKind::P) && kinds.contains(&NodeKind::V)) {
                    return Err(GraphError::BadTensorShape);
                }
            }
            _ => {}
        }
        let kind = spec.kind.unwrap_or_else(|| spec.label.default_kind());
        self.push_node(kind, spec.class, spec.label, preds)
    }

    /// Returns the shared Const node for `value`, creating it on first use.
    pub fn const_node(&mut self, value: AtomValue) -> NodeId {
        if let Some(id) = self.const_index.get(&value) {
            return *id;
        }
        let id = self
            .push_node(NodeKind::V, NodeClass::Plain, Label::Const(value.clone()), &[])
            .expect("const node creation cannot fail");
        self.const_index.insert(value, id);
        id
    }

    fn push_node(
        &mut self,
        kind: NodeKind,
        class: NodeClass,
        label: Label,
        preds: &[NodeId],
    ) -> Result<NodeId, GraphError> {
        let id = self.next_id;
        self.next_id += 1;
        self.entries.insert(
            id,
            Entry {
                node: ProvNode { id, kind, class, label },
                preds: preds.to_vec(),
                succs: Vec::new(),
            },
        );
        for p in preds {
            self.entries.get_mut(p).expect("predecessor exists").succs.push(id);
        }
        Ok(id)
    }

    /// Used by deserialization and derived-graph construction, where node
    /// ids are dictated by the source.
    pub(crate) fn insert_raw_node(&mut self, node: ProvNode) {
        let id = node.id;
        if let Label::Const(v) = &node.label {
            self.const_index.entry(v.clone()).or_insert(id);
        }
        self.entries.insert(id, Entry { node, preds: Vec::new(), succs: Vec::new() });
        self.next_id = self.next_id.max(id + 1);
    }

    pub(crate) fn insert_raw_edge(&mut self, src: NodeId, dst: NodeId) -> Result<(), GraphError> {
        if !self.contains(src) {
            return Err(GraphError::UnknownNode(src));
        }
        if !self.contains(dst) {
            return Err(GraphError::UnknownNode(dst));
        }
        self.entries.get_mut(&dst).expect("node exists").preds.push(src);
        self.entries.get_mut(&src).expect("node exists").succs.push(dst);
        Ok(())
    }

    /// Exact node/edge counts plus per-label and per-class breakdowns.
    pub fn stats(&self) -> GraphStats {
        let mut stats = GraphStats {
            node_count: self.entries.len() as u64,
            edge_count: self.edge_count() as u64,
            ..GraphStats::default()
        };
        for node in self.nodes() {
            *stats.by_label.entry(node.label.stat_key()).or_insert(0) += 1;
            *stats.by_class.entry(node.class.tag().to_string()).or_insert(0) += 1;
        }
        stats
    }

    /// All module-invocation nodes, in id order.
    pub fn invocations(&self) -> Vec<(NodeId, &InvocationKey)> {
        self.nodes()
            .filter_map(|n| match &n.label {
                Label::Invocation(key) => Some((n.id, key)),
                _ => None,
            })
            .collect()
    }

    /// Token nodes whose display name contains `needle`; test and CLI aid.
    pub fn find_tokens(&self, needle: &str) -> Vec<NodeId> {
        self.nodes()
            .filter_map(|n| match &n.label {
                Label::Token(name) if name.contains(needle) => Some(n.id),
                _ => None,
            })
            .collect()
    }

    /// Renumbers node ids into a form determined by graph structure alone:
    /// nodes are processed by longest-path depth and ordered within a depth
    /// layer by kind, class, label, and relabeled predecessor ids. Two
    /// graphs that differ only in id assignment relabel identically, up to
    /// structurally indistinguishable twins.
    pub fn relabel_canonical(&self) -> ProvGraph {
        let mut depth: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut indeg: BTreeMap<NodeId, usize> =
            self.node_ids().map(|id| (id, self.preds(id).len())).collect();
        let mut ready: Vec<NodeId> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
        while let Some(id) = ready.pop() {
            let d = self
                .preds(id)
                .iter()
                .map(|p| depth[p] + 1)
                .max()
                .unwrap_or(0);
            depth.insert(id, d);
            for s in self.succs(id) {
                let left = indeg.get_mut(s).expect("successor exists");
                *left -= 1;
                if *left == 0 {
                    ready.push(*s);
                }
            }
        }
        let max_depth = depth.values().copied().max().unwrap_or(0);
        let mut mapping: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut next: NodeId = 0;
        for layer in 0..=max_depth {
            let mut members: Vec<NodeId> =
                depth.iter().filter(|(_, d)| **d == layer).map(|(id, _)| *id).collect();
            members.sort_by_cached_key(|id| {
                let node = self.node(*id).expect("node exists");
                let mut preds: Vec<NodeId> =
                    self.preds(*id).iter().map(|p| mapping[p]).collect();
                preds.sort_unstable();
                (node.kind, node.class, node.label.clone(), preds, *id)
            });
            for id in members {
                mapping.insert(id, next);
                next += 1;
            }
        }
        let mut out = ProvGraph::new();
        if self.is_view {
            out.mark_view();
        }
        let mut nodes: Vec<ProvNode> = self
            .nodes()
            .map(|n| ProvNode { id: mapping[&n.id], ..n.clone() })
            .collect();
        nodes.sort_by_key(|n| n.id);
        for n in nodes {
            out.insert_raw_node(n);
        }
        let mut edges: Vec<(NodeId, NodeId)> =
            self.edges().map(|(s, d)| (mapping[&s], mapping[&d])).collect();
        edges.sort_unstable();
        for (s, d) in edges {
            out.insert_raw_edge(s, d).expect("relabeled endpoints exist");
        }
        for (instance, ordinal, node) in self.bindings() {
            out.bind(instance, ordinal, mapping[&node]).expect("relabeled node exists");
        }
        out
    }

    /// Structural equality on node/edge/binding sets. Parallel edges are
    /// compared as multisets.
    pub fn same_structure(&self, other: &ProvGraph) -> bool {
        if self.node_count() != other.node_count() || self.bindings() != other.bindings() {
            return false;
        }
        for (id, entry) in &self.entries {
            let Some(theirs) = other.entries.get(id) else { return false };
            if entry.node != theirs.node {
                return false;
            }
            let mut a = entry.preds.clone();
            let mut b = theirs.preds.clone();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_tokens_get_distinct_ids() {
        let mut g = ProvGraph::new();
        let a = g.fresh_token(NodeClass::Input, "req (P_1,B_1,Civic)").unwrap();
        let b = g.fresh_token(NodeClass::State, "car C_2").unwrap();
        assert_ne!(a, b);
        assert_eq!(g.node(a).unwrap().class, NodeClass::Input);
        assert_eq!(g.node(b).unwrap().class, NodeClass::State);
        assert_eq!(g.node(b).unwrap().kind, NodeKind::P);
    }

    #[test]
    fn token_class_restricted() {
        let mut g = ProvGraph::new();
        assert_eq!(
            g.fresh_token(NodeClass::Plain, "x").unwrap_err(),
            GraphError::BadTokenClass
        );
    }

    #[test]
    fn extend_builds_edges() {
        let mut g = ProvGraph::new();
        let t1 = g.fresh_token(NodeClass::Input, "t1").unwrap();
        let t2 = g.fresh_token(NodeClass::Input, "t2").unwrap();
        let j = g.extend(NodeSpec::plain(Label::Times), &[t1, t2]).unwrap();
        assert_eq!(g.preds(j), &[t1, t2]);
        assert_eq!(g.succs(t1), &[j]);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn delta_requires_predecessor() {
        let mut g = ProvGraph::new();
        let err = g.extend(NodeSpec::plain(Label::Delta), &[]).unwrap_err();
        assert!(matches!(err, GraphError::MissingPredecessors { .. }));
    }

    #[test]
    fn extend_rejects_unknown_predecessor() {
        let mut g = ProvGraph::new();
        let err = g.extend(NodeSpec::plain(Label::Plus), &[42]).unwrap_err();
        assert_eq!(err, GraphError::UnknownNode(42));
    }

    #[test]
    fn const_nodes_are_shared_by_value() {
        let mut g = ProvGraph::new();
        let a = g.const_node(AtomValue::Int(1));
        let b = g.const_node(AtomValue::Int(1));
        let c = g.const_node(AtomValue::Int(2));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn parallel_edges_are_kept() {
        let mut g = ProvGraph::new();
        let t = g.fresh_token(NodeClass::Input, "t").unwrap();
        let sq = g.extend(NodeSpec::plain(Label::Times), &[t, t]).unwrap();
        assert_eq!(g.preds(sq), &[t, t]);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn stats_count_labels_and_classes() {
        let mut g = ProvGraph::new();
        assert_eq!(g.stats().node_count, 0);
        let t1 = g.fresh_token(NodeClass::State, "c2").unwrap();
        let t2 = g.fresh_token(NodeClass::State, "c3").unwrap();
        let p = g.extend(NodeSpec::plain(Label::Plus), &[t1, t2]).unwrap();
        g.extend(NodeSpec::plain(Label::Delta), &[p]).unwrap();
        let stats = g.stats();
        assert_eq!(stats.node_count, 4);
        assert_eq!(stats.edge_count, 3);
        assert_eq!(stats.by_label["Token"], 2);
        assert_eq!(stats.by_label["Delta"], 1);
        assert_eq!(stats.by_class["s"], 2);
        assert_eq!(stats.by_class["plain"], 2);
    }

    #[test]
    fn tokens_are_the_sourceless_p_nodes() {
        // Token nodes are exactly the in-degree-0 P-nodes other than
        // module invocations (consts are V-kind).
        let mut g = ProvGraph::new();
        let t = g.fresh_token(NodeClass::Input, "t").unwrap();
        let inv = g
            .extend(
                NodeSpec::classed(
                    NodeClass::Module,
                    Label::Invocation(InvocationKey {
                        module: "M".into(),
                        node: "n".into(),
                        index: 1,
                    }),
                ),
                &[],
            )
            .unwrap();
        g.const_node(AtomValue::Int(1));
        let wrapped = g
            .extend(NodeSpec::classed(NodeClass::Input, Label::Times), &[t, inv])
            .unwrap();
        for n in g.nodes() {
            let sourceless_p = g.preds(n.id).is_empty() && n.kind == NodeKind::P;
            let is_token = matches!(n.label, Label::Token(_));
            let is_inv = matches!(n.label, Label::Invocation(_));
            assert_eq!(is_token, sourceless_p && !is_inv, "node {}", n.id);
        }
        assert_eq!(g.preds(wrapped).len(), 2);
    }
}
