//! Module and workflow model, structural validation, and the execution
//! driver.
//!
//! A module is a 5-tuple of input, state and output schemas plus two
//! queries: the state manipulation query and the output query. A workflow
//! is a connected DAG whose nodes are labelled with module names and whose
//! edges carry relation names. Two workflow nodes may share a module name,
//! in which case they share that module's persistent state (the dealer's
//! bid and purchase phases work this way), so state is keyed by module
//! name.

mod def;
mod exec;
mod io;

pub use def::{parse_workflow_def, render_workflow_def, WfDefError};
pub use exec::{
    topological_order, ExecutionRecord, OrderPolicy, RunLog, Runner,
    WorkflowError as ExecError, WorkflowInput,
};
pub use io::{
    load_initial_state, load_input_sequence, write_initial_state, write_input_sequence,
    RunIoError,
};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::evalengine::AnnotatedRelation;
use crate::pigparse::PigProgram;
use crate::relmodel::Schema;

/// Module definition: schemas for inputs, state and outputs, plus the state
/// manipulation and output queries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleSpec {
    pub name: String,
    pub s_in: Vec<Schema>,
    pub s_state: Vec<Schema>,
    pub s_out: Vec<Schema>,
    pub q_state: PigProgram,
    pub q_out: PigProgram,
}

impl ModuleSpec {
    /// A source module has no inputs, no state, and no queries; workflow
    /// input nodes must be labelled with source modules, and their output
    /// relations are filled from external files.
    pub fn is_source(&self) -> bool {
        self.s_in.is_empty()
            && self.s_state.is_empty()
            && self.q_state.is_empty()
            && self.q_out.is_empty()
    }

    pub fn in_schema(&self, rel: &str) -> Option<&Schema> {
        self.s_in.iter().find(|s| s.name == rel)
    }

    pub fn state_schema(&self, rel: &str) -> Option<&Schema> {
        self.s_state.iter().find(|s| s.name == rel)
    }

    pub fn out_schema(&self, rel: &str) -> Option<&Schema> {
        self.s_out.iter().find(|s| s.name == rel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub relations: Vec<String>,
}

/// Workflow graph: nodes labelled with module names, edges labelled with
/// relation names, and distinguished input/output node sets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Workflow {
    /// node name -> module name
    pub nodes: BTreeMap<String, String>,
    pub edges: Vec<Edge>,
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
}

impl Workflow {
    pub fn incoming<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.dst == node)
    }

    pub fn outgoing<'a>(&'a self, node: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.src == node)
    }
}

/// A parsed workflow definition file: module specs plus the graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WorkflowDef {
    pub modules: BTreeMap<String, ModuleSpec>,
    pub workflow: Workflow,
}

/// Per-module persistent state, shared across the nodes carrying that
/// module. Relations are reference-counted so run logs can snapshot
/// cheaply.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorkflowState {
    pub per_module: BTreeMap<String, BTreeMap<String, Arc<AnnotatedRelation>>>,
}

impl WorkflowState {
    pub fn relation(&self, module: &str, rel: &str) -> Option<&Arc<AnnotatedRelation>> {
        self.per_module.get(module).and_then(|m| m.get(rel))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkflowValidationError {
    #[error("node {node} is labelled with unknown module {module}")]
    UnknownModule { node: String, module: String },
    #[error("edge references unknown node {0}")]
    UnknownNode(String),
    #[error("workflow has a cycle through node {0}")]
    Cycle(String),
    #[error("workflow is not connected: node {0} is unreachable")]
    Disconnected(String),
    #[error("input node {0} has incoming edges")]
    InputWithIncoming(String),
    #[error("output node {0} has outgoing edges")]
    OutputWithOutgoing(String),
    #[error("edge {src}->{dst} carries {relation}, which is not an output of {src}")]
    EdgeNotInSourceOut { src: String, dst: String, relation: String },
    #[error("edge {src}->{dst} carries {relation}, which is not an input of {dst}")]
    EdgeNotInTargetIn { src: String, dst: String, relation: String },
    #[error("edge {src}->{dst}: schema of {relation} differs between source output and target input")]
    EdgeSchemaMismatch { src: String, dst: String, relation: String },
    #[error("node {node} receives {relation} on two incoming edges")]
    OverlappingIncoming { node: String, relation: String },
    #[error("node {node} never receives its input relation {relation}")]
    UncoveredInput { node: String, relation: String },
    #[error("input node {node} must be labelled with a source module, but {module} has inputs, state or queries")]
    InputNodeNotSource { node: String, module: String },
    #[error("module {module}: relation {relation} appears in more than one of the input/state/output schemas")]
    SchemaOverlap { module: String, relation: String },
    #[error("module {module}: {error}")]
    BadSchema { module: String, error: String },
    #[error("module {module}: output query never assigns output relation {relation}")]
    MissingOutputAssignment { module: String, relation: String },
    #[error("workflow has no nodes")]
    Empty,
    #[error("input/output set references unknown node {0}")]
    UnknownInOut(String),
}

/// Checks every structural invariant of the workflow model and reports the
/// first violation.
pub fn validate_workflow(
    wf: &Workflow,
    modules: &BTreeMap<String, ModuleSpec>,
) -> Result<(), WorkflowValidationError> {
    use WorkflowValidationError as E;

    if wf.nodes.is_empty() {
        return Err(E::Empty);
    }
    for (node, module) in &wf.nodes {
        if !modules.contains_key(module) {
            return Err(E::UnknownModule { node: node.clone(), module: module.clone() });
        }
    }
    for m in modules.values() {
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for schema in m.s_in.iter().chain(&m.s_state).chain(&m.s_out) {
            schema.check_well_formed().map_err(|e| E::BadSchema {
                module: m.name.clone(),
                error: e.to_string(),
            })?;
            if !seen.insert(&schema.name) {
                return Err(E::SchemaOverlap {
                    module: m.name.clone(),
                    relation: schema.name.clone(),
                });
            }
        }
    }
    for n in wf.inputs.iter().chain(&wf.outputs) {
        if !wf.nodes.contains_key(n) {
            return Err(E::UnknownInOut(n.clone()));
        }
    }
    for e in &wf.edges {
        for n in [&e.src, &e.dst] {
            if !wf.nodes.contains_key(n) {
                return Err(E::UnknownNode(n.clone()));
            }
        }
        let src_mod = &modules[&wf.nodes[&e.src]];
        let dst_mod = &modules[&wf.nodes[&e.dst]];
        for rel in &e.relations {
            let out = src_mod.out_schema(rel).ok_or_else(|| E::EdgeNotInSourceOut {
                src: e.src.clone(),
                dst: e.dst.clone(),
                relation: rel.clone(),
            })?;
            let inp = dst_mod.in_schema(rel).ok_or_else(|| E::EdgeNotInTargetIn {
                src: e.src.clone(),
                dst: e.dst.clone(),
                relation: rel.clone(),
            })?;
            if out.attributes != inp.attributes {
                return Err(E::EdgeSchemaMismatch {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    relation: rel.clone(),
                });
            }
        }
    }
    for node in wf.nodes.keys() {
        if wf.inputs.contains(node) && wf.incoming(node).next().is_some() {
            return Err(E::InputWithIncoming(node.clone()));
        }
        if wf.outputs.contains(node) && wf.outgoing(node).next().is_some() {
            return Err(E::OutputWithOutgoing(node.clone()));
        }
        let mut seen: BTreeSet<&str> = BTreeSet::new();
        for e in wf.incoming(node) {
            for rel in &e.relations {
                if !seen.insert(rel) {
                    return Err(E::OverlappingIncoming {
                        node: node.clone(),
                        relation: rel.clone(),
                    });
                }
            }
        }
        let module = &modules[&wf.nodes[node]];
        if wf.inputs.contains(node) {
            if !module.is_source() {
                return Err(E::InputNodeNotSource {
                    node: node.clone(),
                    module: module.name.clone(),
                });
            }
        } else {
            for schema in &module.s_in {
                if !seen.contains(schema.name.as_str()) {
                    return Err(E::UncoveredInput {
                        node: node.clone(),
                        relation: schema.name.clone(),
                    });
                }
            }
            let assigned = module.q_out.assigned_aliases();
            for schema in &module.s_out {
                if !assigned.contains(&schema.name.as_str()) {
                    return Err(E::MissingOutputAssignment {
                        module: module.name.clone(),
                        relation: schema.name.clone(),
                    });
                }
            }
        }
    }

    // Acyclicity via Kahn's algorithm.
    let mut indeg: BTreeMap<&str, usize> =
        wf.nodes.keys().map(|n| (n.as_str(), 0)).collect();
    for e in &wf.edges {
        *indeg.get_mut(e.dst.as_str()).expect("node exists") += 1;
    }
    let mut ready: BTreeSet<&str> =
        indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut seen = 0usize;
    while let Some(&n) = ready.iter().next() {
        ready.remove(n);
        seen += 1;
        for e in wf.outgoing(n) {
            let d = indeg.get_mut(e.dst.as_str()).expect("node exists");
            *d -= 1;
            if *d == 0 {
                ready.insert(&e.dst);
            }
        }
    }
    if seen != wf.nodes.len() {
        let culprit = indeg.iter().find(|(_, d)| **d > 0).map(|(n, _)| n.to_string());
        return Err(E::Cycle(culprit.unwrap_or_default()));
    }

    // Undirected connectivity.
    let start = wf.nodes.keys().next().expect("non-empty");
    let mut reached: BTreeSet<&str> = BTreeSet::new();
    let mut stack = vec![start.as_str()];
    while let Some(n) = stack.pop() {
        if !reached.insert(n) {
            continue;
        }
        for e in &wf.edges {
            if e.src == n {
                stack.push(&e.dst);
            }
            if e.dst == n {
                stack.push(&e.src);
            }
        }
    }
    if reached.len() != wf.nodes.len() {
        let missing = wf
            .nodes
            .keys()
            .find(|n| !reached.contains(n.as_str()))
            .expect("some node unreached");
        return Err(E::Disconnected(missing.clone()));
    }
    Ok(())
}
