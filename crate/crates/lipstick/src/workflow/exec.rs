//! Reference execution semantics: single executions and sequences.
//!
//! One execution processes nodes in a deterministic topological order. Per
//! module invocation the driver records a module-invocation node, wraps
//! every input tuple in a class-`i` `·` node over the tuple's node and the
//! invocation node, wraps every state tuple in a class-`s` `·` node the
//! same way, evaluates the state query and then the output query (the
//! output query sees the state the state query just produced), and wraps
//! every output tuple in a class-`o` `·` node. Input nodes are sources:
//! their external tuples receive fresh class-`i` tokens and flow to
//! consumers unwrapped, so a consumer's class-`i` node wraps the token
//! itself.
//!
//! State relations not reassigned by the state query persist unchanged,
//! keeping their original provenance nodes.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use super::{validate_workflow, ModuleSpec, Workflow, WorkflowState, WorkflowValidationError};
use crate::evalengine::{AnnotatedRelation, BbRegistry, EvalError, Evaluator, Tracker};
use crate::pigparse::{resolve_and_typecheck, TypeError};
use crate::provgraph::{InvocationKey, Label, NodeClass, NodeId, NodeSpec};
use crate::relmodel::{validate_against_schema, Bag, Instance, Schema, ValidationError};

/// Deterministic topological tie-breaking. Both policies yield a valid
/// order; runs must be serializable, so outputs agree across policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderPolicy {
    #[default]
    NameAsc,
    NameDesc,
}

/// External inputs of one execution: (input node, relation) -> bag.
pub type WorkflowInput = BTreeMap<(String, String), Bag>;

#[derive(Debug, Clone)]
pub struct ExecutionRecord {
    pub index: usize,
    pub inputs: WorkflowInput,
    pub pre_state: WorkflowState,
    /// Output instances of the workflow's output nodes, class-`o` wrapped.
    pub outputs: BTreeMap<(String, String), Arc<AnnotatedRelation>>,
    pub post_state: WorkflowState,
    /// Invocation index used by each node in this execution.
    pub invocations: BTreeMap<String, u64>,
    /// Every alias produced by the state and output queries, keyed by
    /// (node, phase, alias). Only filled when the runner records
    /// intermediates.
    pub intermediates: BTreeMap<(String, String, String), Arc<AnnotatedRelation>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub executions: Vec<ExecutionRecord>,
}

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Validation(#[from] WorkflowValidationError),
    #[error("module {module} {phase} query: {source}")]
    ModuleType {
        module: String,
        phase: &'static str,
        #[source]
        source: TypeError,
    },
    #[error("module {module}: {phase} query assigns {relation} with a schema that differs from the declaration")]
    StateSchemaMismatch { module: String, phase: &'static str, relation: String },
    #[error("instance for {node}.{relation} violates its schema: {source}")]
    BadInstance {
        node: String,
        relation: String,
        #[source]
        source: ValidationError,
    },
    #[error("execution {execution}, node {node}: {source}")]
    Eval {
        execution: usize,
        node: String,
        #[source]
        source: EvalError,
    },
    #[error("internal: {0}")]
    Internal(String),
}

/// Topological order of the workflow nodes under the given policy.
pub fn topological_order(wf: &Workflow, policy: OrderPolicy) -> Vec<String> {
    let mut indeg: BTreeMap<&str, usize> = wf.nodes.keys().map(|n| (n.as_str(), 0)).collect();
    for e in &wf.edges {
        *indeg.get_mut(e.dst.as_str()).expect("validated") += 1;
    }
    let mut ready: std::collections::BTreeSet<&str> =
        indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
    let mut order = Vec::with_capacity(wf.nodes.len());
    while !ready.is_empty() {
        let n = match policy {
            OrderPolicy::NameAsc => *ready.iter().next().expect("non-empty"),
            OrderPolicy::NameDesc => *ready.iter().next_back().expect("non-empty"),
        };
        ready.remove(n);
        order.push(n.to_string());
        for e in wf.outgoing(n) {
            let d = indeg.get_mut(e.dst.as_str()).expect("validated");
            *d -= 1;
            if *d == 0 {
                ready.insert(&e.dst);
            }
        }
    }
    order
}

/// Drives executions of one workflow against one provenance graph.
pub struct Runner<'g, 'm> {
    workflow: &'m Workflow,
    modules: &'m BTreeMap<String, ModuleSpec>,
    bbs: &'m BbRegistry,
    evaluator: Evaluator<'g>,
    order: Vec<String>,
    inv_counters: BTreeMap<String, u64>,
    exec_index: usize,
    record_intermediates: bool,
    pub state: WorkflowState,
}

impl<'g, 'm> Runner<'g, 'm> {
    /// Validates the workflow, type-checks every module's queries against
    /// its declared schemas, and annotates the initial state with fresh
    /// class-`s` tokens.
    pub fn new(
        workflow: &'m Workflow,
        modules: &'m BTreeMap<String, ModuleSpec>,
        bbs: &'m BbRegistry,
        tracker: Tracker<'g>,
        initial_state: &BTreeMap<String, Instance>,
        policy: OrderPolicy,
    ) -> Result<Self, WorkflowError> {
        validate_workflow(workflow, modules)?;
        let bb_schemas = bbs.schemas();
        for module in modules.values() {
            let mut env: BTreeMap<String, Schema> = BTreeMap::new();
            for s in module.s_in.iter().chain(&module.s_state) {
                env.insert(s.name.clone(), s.clone());
            }
            for (phase, prog, declared) in [
                ("state", &module.q_state, &module.s_state),
                ("output", &module.q_out, &module.s_out),
            ] {
                let schemas = resolve_and_typecheck(prog, &env, &bb_schemas).map_err(|source| {
                    WorkflowError::ModuleType { module: module.name.clone(), phase, source }
                })?;
                for decl in declared.iter() {
                    if let Some(actual) = schemas.get(&decl.name) {
                        if actual.attributes != decl.attributes {
                            return Err(WorkflowError::StateSchemaMismatch {
                                module: module.name.clone(),
                                phase,
                                relation: decl.name.clone(),
                            });
                        }
                    }
                }
            }
        }

        let mut evaluator = Evaluator::new(tracker);
        let mut state = WorkflowState::default();
        let used_modules: std::collections::BTreeSet<&String> = workflow.nodes.values().collect();
        for module_name in used_modules {
            let module = &modules[module_name];
            let mut rels = BTreeMap::new();
            for schema in &module.s_state {
                let empty = Bag::empty();
                let bag = initial_state
                    .get(module_name)
                    .and_then(|inst| inst.get(&schema.name))
                    .unwrap_or(&empty);
                validate_against_schema(bag, schema).map_err(|source| {
                    WorkflowError::BadInstance {
                        node: module_name.clone(),
                        relation: schema.name.clone(),
                        source,
                    }
                })?;
                let rel = evaluator
                    .annotate_base(
                        bag,
                        schema,
                        NodeClass::State,
                        &format!("{module_name}/{}/", schema.name),
                        &format!("stateinit:{module_name}:{}", schema.name),
                    )
                    .map_err(|source| WorkflowError::Eval {
                        execution: 0,
                        node: module_name.clone(),
                        source,
                    })?;
                rels.insert(schema.name.clone(), Arc::new(rel));
            }
            state.per_module.insert(module_name.clone(), rels);
        }

        let order = topological_order(workflow, policy);
        Ok(Runner {
            workflow,
            modules,
            bbs,
            evaluator,
            order,
            inv_counters: BTreeMap::new(),
            exec_index: 0,
            record_intermediates: false,
            state,
        })
    }

    pub fn set_simplified_agg(&mut self, simplified: bool) {
        self.evaluator.simplified_agg = simplified;
    }

    /// Capture every query alias in the execution records; off by default
    /// to keep benchmark runs lean.
    pub fn set_record_intermediates(&mut self, record: bool) {
        self.record_intermediates = record;
    }

    fn wrap_relation(
        &mut self,
        rel: &AnnotatedRelation,
        schema: &Schema,
        class: NodeClass,
        inv_node: NodeId,
        instance_id: String,
        node: &str,
    ) -> Result<AnnotatedRelation, WorkflowError> {
        let mut tuples = Vec::with_capacity(rel.tuples.len());
        for t in &rel.tuples {
            let wrapped = self
                .evaluator
                .tracker
                .extend(NodeSpec::classed(class, Label::Times), &[t.pnode, inv_node])
                .map_err(|e| WorkflowError::Eval {
                    execution: self.exec_index,
                    node: node.to_string(),
                    source: e.into(),
                })?;
            let mut nt = t.clone();
            nt.pnode = wrapped;
            tuples.push(nt);
        }
        Ok(self.evaluator.finish_relation(schema.clone(), tuples, instance_id))
    }

    /// Runs one execution over the given external inputs, threading state.
    pub fn execute_once(
        &mut self,
        external: &WorkflowInput,
    ) -> Result<ExecutionRecord, WorkflowError> {
        let exec = self.exec_index;
        let pre_state = self.state.clone();
        let mut produced: BTreeMap<(String, String), Arc<AnnotatedRelation>> = BTreeMap::new();
        let mut invocations = BTreeMap::new();
        let mut intermediates: BTreeMap<(String, String, String), Arc<AnnotatedRelation>> =
            BTreeMap::new();

        let order = self.order.clone();
        for node in &order {
            let module_name = self.workflow.nodes[node].clone();
            let module = &self.modules[&module_name];
            let idx = {
                let c = self.inv_counters.entry(module_name.clone()).or_insert(0);
                *c += 1;
                *c
            };
            invocations.insert(node.clone(), idx);
            let eval_err = |node: &str| {
                let node = node.to_string();
                move |source: EvalError| WorkflowError::Eval { execution: exec, node, source }
            };
            let inv_node = self
                .evaluator
                .tracker
                .extend(
                    NodeSpec::classed(
                        NodeClass::Module,
                        Label::Invocation(InvocationKey {
                            module: module_name.clone(),
                            node: node.clone(),
                            index: idx,
                        }),
                    ),
                    &[],
                )
                .map_err(|e| eval_err(node)(e.into()))?;

            if self.workflow.inputs.contains(node) {
                // Source node: external instances become the outputs, each
                // tuple annotated with a fresh class-i token.
                for schema in &module.s_out {
                    let empty = Bag::empty();
                    let bag = external
                        .get(&(node.clone(), schema.name.clone()))
                        .unwrap_or(&empty);
                    validate_against_schema(bag, schema).map_err(|source| {
                        WorkflowError::BadInstance {
                            node: node.clone(),
                            relation: schema.name.clone(),
                            source,
                        }
                    })?;
                    let rel = self
                        .evaluator
                        .annotate_base(
                            bag,
                            schema,
                            NodeClass::Input,
                            &format!("{node}/{}@{exec}/", schema.name),
                            &format!("wfin:{node}:{idx}:{}", schema.name),
                        )
                        .map_err(eval_err(node))?;
                    produced.insert((node.clone(), schema.name.clone()), Arc::new(rel));
                }
                continue;
            }

            // Wrap inputs copied along incoming edges.
            let mut input_env: BTreeMap<String, AnnotatedRelation> = BTreeMap::new();
            let incoming: Vec<(String, String)> = self
                .workflow
                .incoming(node)
                .flat_map(|e| e.relations.iter().map(move |r| (e.src.clone(), r.clone())))
                .collect();
            for (src, rel_name) in incoming {
                let src_rel = produced
                    .get(&(src.clone(), rel_name.clone()))
                    .ok_or_else(|| {
                        WorkflowError::Internal(format!(
                            "producer {src} of {rel_name} has not run"
                        ))
                    })?
                    .clone();
                let schema = module
                    .in_schema(&rel_name)
                    .expect("edge validated against input schema");
                let wrapped = self.wrap_relation(
                    &src_rel,
                    schema,
                    NodeClass::Input,
                    inv_node,
                    format!("in:{node}:{idx}:{rel_name}"),
                    node,
                )?;
                input_env.insert(rel_name, wrapped);
            }

            // Wrap the module's current state.
            let module_state = self
                .state
                .per_module
                .get(&module_name)
                .cloned()
                .unwrap_or_default();
            let mut env: BTreeMap<String, AnnotatedRelation> = input_env.clone();
            for schema in &module.s_state {
                let cur = module_state
                    .get(&schema.name)
                    .ok_or_else(|| {
                        WorkflowError::Internal(format!(
                            "state {}.{} missing",
                            module_name, schema.name
                        ))
                    })?
                    .clone();
                let wrapped = self.wrap_relation(
                    &cur,
                    schema,
                    NodeClass::State,
                    inv_node,
                    format!("state:{node}:{idx}:{}", schema.name),
                    node,
                )?;
                env.insert(schema.name.clone(), wrapped);
            }
            let wrapped_state: BTreeMap<String, AnnotatedRelation> = module
                .s_state
                .iter()
                .map(|s| (s.name.clone(), env[&s.name].clone()))
                .collect();

            // State query, then the new module state.
            self.evaluator
                .eval_program(&mut env, &module.q_state, self.bbs, &format!("q:{node}:{idx}:state"))
                .map_err(eval_err(node))?;
            if self.record_intermediates {
                for alias in module.q_state.assigned_aliases() {
                    intermediates.insert(
                        (node.clone(), "state".to_string(), alias.to_string()),
                        Arc::new(env[alias].clone()),
                    );
                }
            }
            let assigned = module.q_state.assigned_aliases();
            let mut new_state: BTreeMap<String, Arc<AnnotatedRelation>> = BTreeMap::new();
            for schema in &module.s_state {
                if assigned.contains(&schema.name.as_str()) {
                    new_state
                        .insert(schema.name.clone(), Arc::new(env[&schema.name].clone()));
                } else {
                    // Untouched state persists with its original nodes.
                    new_state.insert(
                        schema.name.clone(),
                        module_state[&schema.name].clone(),
                    );
                }
            }

            // Output query over inputs plus the state it just produced.
            let mut out_env: BTreeMap<String, AnnotatedRelation> = input_env;
            for schema in &module.s_state {
                let rel = if assigned.contains(&schema.name.as_str()) {
                    (*new_state[&schema.name]).clone()
                } else {
                    wrapped_state[&schema.name].clone()
                };
                out_env.insert(schema.name.clone(), rel);
            }
            self.evaluator
                .eval_program(&mut out_env, &module.q_out, self.bbs, &format!("q:{node}:{idx}:out"))
                .map_err(eval_err(node))?;
            if self.record_intermediates {
                for alias in module.q_out.assigned_aliases() {
                    intermediates.insert(
                        (node.clone(), "out".to_string(), alias.to_string()),
                        Arc::new(out_env[alias].clone()),
                    );
                }
            }

            for schema in &module.s_out {
                let rel = out_env.get(&schema.name).ok_or_else(|| {
                    WorkflowError::Internal(format!(
                        "output {} not produced by {}",
                        schema.name, module_name
                    ))
                })?;
                let wrapped = self.wrap_relation(
                    rel,
                    schema,
                    NodeClass::Output,
                    inv_node,
                    format!("out:{node}:{idx}:{}", schema.name),
                    node,
                )?;
                produced.insert((node.clone(), schema.name.clone()), Arc::new(wrapped));
            }
            self.state.per_module.insert(module_name, new_state);
        }

        let mut outputs = BTreeMap::new();
        for node in &self.workflow.outputs {
            let module = &self.modules[&self.workflow.nodes[node]];
            for schema in &module.s_out {
                if let Some(rel) = produced.get(&(node.clone(), schema.name.clone())) {
                    outputs.insert((node.clone(), schema.name.clone()), rel.clone());
                }
            }
        }
        self.exec_index += 1;
        Ok(ExecutionRecord {
            index: exec,
            inputs: external.clone(),
            pre_state,
            outputs,
            post_state: self.state.clone(),
            invocations,
            intermediates,
        })
    }

    /// Runs the input sequence in order, threading state between
    /// executions.
    pub fn execute_sequence(
        &mut self,
        inputs: &[WorkflowInput],
    ) -> Result<RunLog, WorkflowError> {
        let mut log = RunLog::default();
        for input in inputs {
            log.executions.push(self.execute_once(input)?);
        }
        Ok(log)
    }
}
