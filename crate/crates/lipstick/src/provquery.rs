//! Read-only queries over frozen provenance graphs: ZoomOut/ZoomIn,
//! deletion propagation, subgraph extraction, and dependency queries.
//!
//! All operations leave the base graph untouched and return new values, so
//! repeated what-if queries compose freely.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::evalengine::refold_aggregate;
use crate::provgraph::{
    GraphStats, InvocationKey, Label, NodeClass, NodeId, NodeKind, ProvGraph,
};
use crate::relmodel::AtomValue;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a deletable base fact (a token or a class-i/s node)")]
    NotDeletable(NodeId),
    #[error("module {0} is not collapsed in this view")]
    NotCollapsed(String),
}

// ---------------------------------------------------------------------------
// Invocation structure
// ---------------------------------------------------------------------------

/// The class-`i`/`s` wrappers (entry side) and class-`o` wrappers (exit
/// side) of one invocation: the successors of its invocation node.
fn invocation_wrappers(graph: &ProvGraph, inv: NodeId) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut entry = Vec::new();
    let mut exit = Vec::new();
    for s in graph.succs(inv) {
        match graph.node(*s).map(|n| n.class) {
            Some(NodeClass::Input) | Some(NodeClass::State) => entry.push(*s),
            Some(NodeClass::Output) => exit.push(*s),
            _ => {}
        }
    }
    entry.sort_unstable();
    entry.dedup();
    exit.sort_unstable();
    exit.dedup();
    (entry, exit)
}

/// Plain nodes strictly inside each invocation: forward-reachable from the
/// invocation's entry wrappers without crossing a classed node, plus the
/// constant operands feeding its tensors. A node claimed by two invocations
/// is shared and belongs to neither.
pub fn invocation_internal_nodes(graph: &ProvGraph) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    let mut sets: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut owner_count: BTreeMap<NodeId, u32> = BTreeMap::new();
    for (inv, _) in graph.invocations() {
        let (entry, _) = invocation_wrappers(graph, inv);
        let mut internal: BTreeSet<NodeId> = BTreeSet::new();
        let mut stack: Vec<NodeId> = entry
            .iter()
            .flat_map(|w| graph.succs(*w).iter().copied())
            .collect();
        while let Some(n) = stack.pop() {
            let Some(node) = graph.node(n) else { continue };
            if node.class != NodeClass::Plain || internal.contains(&n) {
                continue;
            }
            internal.insert(n);
            stack.extend(graph.succs(n).iter().copied());
        }
        // constants feed tensors against the edge direction
        let consts: Vec<NodeId> = internal
            .iter()
            .filter(|n| matches!(graph.node(**n).map(|x| &x.label), Some(Label::Tensor)))
            .flat_map(|t| graph.preds(*t).iter().copied())
            .filter(|p| matches!(graph.node(*p).map(|x| &x.label), Some(Label::Const(_))))
            .collect();
        internal.extend(consts);
        for n in &internal {
            *owner_count.entry(*n).or_insert(0) += 1;
        }
        sets.insert(inv, internal);
    }
    let shared: BTreeSet<NodeId> = owner_count
        .into_iter()
        .filter(|(_, c)| *c > 1)
        .map(|(n, _)| n)
        .collect();
    for set in sets.values_mut() {
        set.retain(|n| !shared.contains(n));
    }
    sets
}

/// Every node belonging to one invocation: the invocation node, its
/// wrappers, and its internal nodes.
pub fn invocation_footprint(graph: &ProvGraph, inv: NodeId) -> BTreeSet<NodeId> {
    let mut set = invocation_internal_nodes(graph).remove(&inv).unwrap_or_default();
    let (entry, exit) = invocation_wrappers(graph, inv);
    set.insert(inv);
    set.extend(entry);
    set.extend(exit);
    set
}

/// Node/edge counts restricted to one invocation's footprint.
pub fn invocation_stats(graph: &ProvGraph, inv: NodeId) -> GraphStats {
    let footprint = invocation_footprint(graph, inv);
    let mut stats = GraphStats::default();
    for n in &footprint {
        let node = graph.node(*n).expect("footprint nodes exist");
        stats.node_count += 1;
        *stats.by_label.entry(node.label.stat_key()).or_insert(0) += 1;
        *stats.by_class.entry(node.class.tag().to_string()).or_insert(0) += 1;
    }
    stats.edge_count = graph
        .edges()
        .filter(|(s, d)| footprint.contains(s) && footprint.contains(d))
        .count() as u64;
    stats
}

// ---------------------------------------------------------------------------
// Zoom
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Collapsed {
    key: InvocationKey,
    hidden: BTreeSet<NodeId>,
    meta_id: NodeId,
}

/// A zoomed view of a base graph: a set of collapsed invocations, each
/// replaced by a meta node hiding the invocation's internal nodes. The base
/// graph is never modified; expanding restores exactly the hidden set.
#[derive(Debug, Clone)]
pub struct ZoomView<'g> {
    base: &'g ProvGraph,
    internal: BTreeMap<NodeId, BTreeSet<NodeId>>,
    /// meta node ids are assigned per invocation, stably, above the base
    /// graph's id range
    meta_ids: BTreeMap<NodeId, NodeId>,
    collapsed: BTreeMap<NodeId, Collapsed>,
}

impl<'g> ZoomView<'g> {
    pub fn new(base: &'g ProvGraph) -> Self {
        let internal = invocation_internal_nodes(base);
        let max_id = base.node_ids().max().map(|i| i + 1).unwrap_or(0);
        let meta_ids = base
            .invocations()
            .iter()
            .enumerate()
            .map(|(rank, (inv, _))| (*inv, max_id + rank as NodeId))
            .collect();
        ZoomView { base, internal, meta_ids, collapsed: BTreeMap::new() }
    }

    pub fn base(&self) -> &ProvGraph {
        self.base
    }

    pub fn collapsed_modules(&self) -> BTreeSet<String> {
        self.collapsed.values().map(|c| c.key.module.clone()).collect()
    }

    pub fn hidden_nodes(&self) -> BTreeSet<NodeId> {
        self.collapsed.values().flat_map(|c| c.hidden.iter().copied()).collect()
    }

    /// Collapses every invocation of `module`. Unknown names and modules
    /// with zero invocations leave the view unchanged.
    pub fn zoom_out(&mut self, module: &str) {
        for (inv, key) in self.base.invocations() {
            if key.module != module || self.collapsed.contains_key(&inv) {
                continue;
            }
            let hidden = self.internal.get(&inv).cloned().unwrap_or_default();
            self.collapsed.insert(
                inv,
                Collapsed { key: key.clone(), hidden, meta_id: self.meta_ids[&inv] },
            );
        }
    }

    /// Restores every collapsed invocation of `module`.
    pub fn zoom_in(&mut self, module: &str) -> Result<(), QueryError> {
        let to_remove: Vec<NodeId> = self
            .collapsed
            .iter()
            .filter(|(_, c)| c.key.module == module)
            .map(|(inv, _)| *inv)
            .collect();
        if to_remove.is_empty() {
            return Err(QueryError::NotCollapsed(module.to_string()));
        }
        for inv in to_remove {
            self.collapsed.remove(&inv);
        }
        Ok(())
    }

    /// Builds the view as a first-class graph: hidden nodes dropped, one
    /// meta node per collapsed invocation, boundary wrappers wired through
    /// the meta node, and all other edges into or out of the hidden region
    /// rerouted to it.
    pub fn materialize(&self) -> ProvGraph {
        let mut out = ProvGraph::new();
        if !self.collapsed.is_empty() {
            out.mark_view();
        }
        let hidden_owner: BTreeMap<NodeId, NodeId> = self
            .collapsed
            .iter()
            .flat_map(|(inv, c)| c.hidden.iter().map(move |n| (*n, *inv)))
            .collect();

        for node in self.base.nodes() {
            if !hidden_owner.contains_key(&node.id) {
                out.insert_raw_node(node.clone());
            }
        }
        for c in self.collapsed.values() {
            out.insert_raw_node(crate::provgraph::ProvNode {
                id: c.meta_id,
                kind: NodeKind::P,
                class: NodeClass::Meta,
                label: Label::Meta(c.key.clone()),
            });
        }

        let mut meta_edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
        for (inv, c) in &self.collapsed {
            let (entry, exit) = invocation_wrappers(self.base, *inv);
            for w in entry {
                meta_edges.insert((w, c.meta_id));
            }
            for w in exit {
                meta_edges.insert((c.meta_id, w));
            }
        }
        for (src, dst) in self.base.edges() {
            match (hidden_owner.get(&src), hidden_owner.get(&dst)) {
                (None, None) => {
                    out.insert_raw_edge(src, dst).expect("endpoints kept");
                }
                (Some(a), None) => {
                    meta_edges.insert((self.collapsed[a].meta_id, dst));
                }
                (None, Some(b)) => {
                    meta_edges.insert((src, self.collapsed[b].meta_id));
                }
                (Some(a), Some(b)) if a != b => {
                    meta_edges
                        .insert((self.collapsed[a].meta_id, self.collapsed[b].meta_id));
                }
                _ => {}
            }
        }
        for (src, dst) in meta_edges {
            out.insert_raw_edge(src, dst).expect("meta endpoints exist");
        }
        for (instance, ordinal, node) in self.base.bindings() {
            if !hidden_owner.contains_key(&node) {
                out.bind(instance, ordinal, node).expect("node kept");
            }
        }
        out
    }
}

/// Collapses every invocation of `module` over a fresh view of `graph`.
pub fn zoom_out<'g>(graph: &'g ProvGraph, module: &str) -> ZoomView<'g> {
    let mut view = ZoomView::new(graph);
    view.zoom_out(module);
    view
}

// ---------------------------------------------------------------------------
// Deletion propagation
// ---------------------------------------------------------------------------

/// Outcome of propagating the deletion of a set of base facts.
#[derive(Debug, Clone, Default)]
pub struct DeletionResult {
    pub deleted: BTreeSet<NodeId>,
    /// Surviving aggregate nodes that lost operands, with their value
    /// recomputed over the surviving tensors.
    pub recomputed: BTreeMap<NodeId, AtomValue>,
}

impl DeletionResult {
    pub fn survives(&self, n: NodeId) -> bool {
        !self.deleted.contains(&n)
    }

    /// The induced subgraph on surviving nodes; bindings to deleted nodes
    /// are removed.
    pub fn surviving_graph(&self, base: &ProvGraph) -> ProvGraph {
        let mut out = ProvGraph::new();
        if base.is_view() {
            out.mark_view();
        }
        for node in base.nodes() {
            if self.survives(node.id) {
                out.insert_raw_node(node.clone());
            }
        }
        for (src, dst) in base.edges() {
            if self.survives(src) && self.survives(dst) {
                out.insert_raw_edge(src, dst).expect("survivors kept");
            }
        }
        for (instance, ordinal, node) in base.bindings() {
            if self.survives(node) {
                out.bind(instance, ordinal, node).expect("survivor kept");
            }
        }
        out
    }
}

/// Propagates the deletion of the seed base facts through the graph.
///
/// Rules follow the semiring zero laws: a `·` or black-box node dies with
/// any predecessor, a `+` only when all alternatives die, `δ(0) = 0`, a
/// tensor dies with its provenance operand, and an aggregate dies when all
/// its tensors die — otherwise its value is recomputed over the survivors.
/// Module-invocation, constant, and meta nodes are never deleted.
pub fn delete_propagate(
    graph: &ProvGraph,
    seeds: &BTreeSet<NodeId>,
) -> Result<DeletionResult, QueryError> {
    for seed in seeds {
        let node = graph.node(*seed).ok_or(QueryError::UnknownNode(*seed))?;
        let deletable = matches!(node.label, Label::Token(_))
            || matches!(node.class, NodeClass::Input | NodeClass::State);
        if !deletable {
            return Err(QueryError::NotDeletable(*seed));
        }
    }

    // Only descendants of the seeds can change; process them in topological
    // order so predecessors are decided first.
    let mut affected: BTreeSet<NodeId> = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = seeds.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        if !affected.insert(n) {
            continue;
        }
        for s in graph.succs(n) {
            queue.push_back(*s);
        }
    }
    let mut indeg: BTreeMap<NodeId, usize> = affected
        .iter()
        .map(|n| {
            let d = graph.preds(*n).iter().filter(|p| affected.contains(p)).count();
            (*n, d)
        })
        .collect();
    let mut ready: BTreeSet<NodeId> = indeg
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();

    let mut deleted: BTreeSet<NodeId> = BTreeSet::new();
    let mut recomputed: BTreeMap<NodeId, AtomValue> = BTreeMap::new();
    while let Some(&n) = ready.iter().next() {
        ready.remove(&n);
        for s in graph.succs(n) {
            if let Some(d) = indeg.get_mut(s) {
                *d -= 1;
                if *d == 0 {
                    ready.insert(*s);
                }
            }
        }
        let node = graph.node(n).expect("affected node exists");
        let preds = graph.preds(n);
        let dead = |id: &NodeId| deleted.contains(id);
        let is_deleted = if seeds.contains(&n) {
            true
        } else {
            match &node.label {
                Label::Token(_) | Label::Invocation(_) | Label::Const(_) | Label::Meta(_) => false,
                Label::Times | Label::Bb(_) => preds.iter().any(dead),
                Label::Plus | Label::Delta => !preds.is_empty() && preds.iter().all(dead),
                Label::Tensor => preds
                    .iter()
                    .any(|p| dead(p) && graph.node(*p).map(|x| x.kind) == Some(NodeKind::P)),
                Label::Agg(op) => {
                    let all_dead = !preds.is_empty() && preds.iter().all(dead);
                    if !all_dead && preds.iter().any(dead) {
                        // survives with fewer operands; recompute the value
                        let values: Vec<AtomValue> = preds
                            .iter()
                            .filter(|p| !dead(p))
                            .filter_map(|t| tensor_const_value(graph, *t))
                            .collect();
                        if let Ok(v) = refold_aggregate(*op, &values) {
                            recomputed.insert(n, v);
                        }
                    }
                    all_dead
                }
            }
        };
        if is_deleted {
            deleted.insert(n);
        }
    }
    Ok(DeletionResult { deleted, recomputed })
}

fn tensor_const_value(graph: &ProvGraph, tensor: NodeId) -> Option<AtomValue> {
    let node = graph.node(tensor)?;
    if !matches!(node.label, Label::Tensor) {
        return None;
    }
    graph.preds(tensor).iter().find_map(|p| match graph.node(*p).map(|x| &x.label) {
        Some(Label::Const(v)) => Some(v.clone()),
        _ => None,
    })
}

/// True iff the existence of `n` depends on that of `seed`: `n` does not
/// survive propagating the deletion of `seed`.
pub fn depends_on(graph: &ProvGraph, n: NodeId, seed: NodeId) -> Result<bool, QueryError> {
    depends_on_set(graph, n, &BTreeSet::from([seed]))
}

/// Dependency against a set of base facts deleted together.
pub fn depends_on_set(
    graph: &ProvGraph,
    n: NodeId,
    seeds: &BTreeSet<NodeId>,
) -> Result<bool, QueryError> {
    if !graph.contains(n) {
        return Err(QueryError::UnknownNode(n));
    }
    Ok(delete_propagate(graph, seeds)?.deleted.contains(&n))
}

// ---------------------------------------------------------------------------
// Subgraph
// ---------------------------------------------------------------------------

/// The induced subgraph on the node's ancestors, descendants, and the
/// predecessors of every descendant (the siblings feeding shared
/// derivations). Node ids are preserved.
pub fn subgraph(graph: &ProvGraph, node: NodeId) -> Result<ProvGraph, QueryError> {
    if !graph.contains(node) {
        return Err(QueryError::UnknownNode(node));
    }
    let mut keep: BTreeSet<NodeId> = BTreeSet::new();
    let mut up = vec![node];
    while let Some(n) = up.pop() {
        if keep.insert(n) {
            up.extend(graph.preds(n).iter().copied());
        }
    }
    let mut descendants: BTreeSet<NodeId> = BTreeSet::new();
    let mut down = vec![node];
    while let Some(n) = down.pop() {
        if descendants.insert(n) {
            down.extend(graph.succs(n).iter().copied());
        }
    }
    for d in &descendants {
        keep.insert(*d);
        keep.extend(graph.preds(*d).iter().copied());
    }

    let mut out = ProvGraph::new();
    if graph.is_view() {
        out.mark_view();
    }
    for n in &keep {
        out.insert_raw_node(graph.node(*n).expect("kept node exists").clone());
    }
    for (src, dst) in graph.edges() {
        if keep.contains(&src) && keep.contains(&dst) {
            out.insert_raw_edge(src, dst).expect("kept endpoints");
        }
    }
    for (instance, ordinal, bound) in graph.bindings() {
        if keep.contains(&bound) {
            out.bind(instance, ordinal, bound).expect("kept node");
        }
    }
    Ok(out)
}
