//! Evaluates Pig programs over annotated relations, extending the
//! provenance graph as it goes.
//!
//! Every tuple carries the id of its provenance node; tuples inside nested
//! bags keep their own nodes. Construction rules per operator:
//!
//! * projection: one `+` node per distinct projected value, fed by every
//!   source tuple with that projection (the `BAG` modifier keeps one unary
//!   `+` per source tuple instead);
//! * join and field FLATTEN: a `·` node over the two contributing nodes;
//! * group/cogroup/distinct: a `δ` node over a `+` node over the members;
//! * aggregation: the tuple gets a `+` node, and the aggregate value a
//!   v-node fed by one `⊗` per group member pairing the member's node with
//!   a shared constant v-node;
//! * black boxes: one node per call, fed by the context tuple's node and
//!   the nodes of every tuple in relation-valued arguments; flattened
//!   output tuples adopt the call node;
//! * filter, union and order touch no nodes.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::pigparse::typecheck;
use crate::pigparse::{AggSpec, Condition, FieldRef, GroupKey, NamedField, OpExpr, Operand, PigProgram, ProjItem, TypeError};
use crate::provgraph::{AggOp, GraphError, Label, NodeClass, NodeId, NodeSpec, ProvGraph};
use crate::relmodel::{validate_against_schema, AtomValue, Bag, Schema, Tuple, Value};

/// Placeholder node id used when provenance tracking is off.
pub const UNTRACKED: NodeId = NodeId::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum AnnValue {
    Atom(AtomValue),
    Bag(Vec<AnnotatedTuple>),
}

impl AnnValue {
    pub fn strip(&self) -> Value {
        match self {
            AnnValue::Atom(a) => Value::Atom(a.clone()),
            AnnValue::Bag(ts) => Value::Bag(Bag::new(ts.iter().map(AnnotatedTuple::strip).collect())),
        }
    }

    fn as_atom(&self) -> Option<&AtomValue> {
        match self {
            AnnValue::Atom(a) => Some(a),
            AnnValue::Bag(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTuple {
    pub values: Vec<AnnValue>,
    pub pnode: NodeId,
    /// Aggregate-valued fields map to their Agg v-node.
    pub value_bindings: BTreeMap<usize, NodeId>,
}

impl AnnotatedTuple {
    pub fn new(values: Vec<AnnValue>, pnode: NodeId) -> Self {
        AnnotatedTuple { values, pnode, value_bindings: BTreeMap::new() }
    }

    pub fn strip(&self) -> Tuple {
        Tuple(self.values.iter().map(AnnValue::strip).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedRelation {
    pub schema: Schema,
    /// Kept in canonical order (by stripped value, ties by node id).
    pub tuples: Vec<AnnotatedTuple>,
    pub instance_id: String,
}

impl AnnotatedRelation {
    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    /// Drops annotations, yielding a plain bag in canonical order.
    pub fn to_bag(&self) -> Bag {
        Bag::new(self.tuples.iter().map(AnnotatedTuple::strip).collect())
    }
}

/// Host function backing a black-box call: takes the resolved argument
/// values of one input tuple, returns a bag. Must be deterministic.
pub type BbFn = Arc<dyn Fn(&[Value]) -> Result<Bag, String> + Send + Sync>;

#[derive(Clone)]
pub struct BbEntry {
    pub output: Schema,
    pub func: BbFn,
}

/// Named registry of black-box functions and their output schemas.
#[derive(Clone, Default)]
pub struct BbRegistry {
    entries: BTreeMap<String, BbEntry>,
}

impl BbRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        output: Schema,
        func: impl Fn(&[Value]) -> Result<Bag, String> + Send + Sync + 'static,
    ) {
        self.entries.insert(name.into(), BbEntry { output, func: Arc::new(func) });
    }

    pub fn get(&self, name: &str) -> Option<&BbEntry> {
        self.entries.get(name)
    }

    /// Output schemas by name, as the type checker wants them.
    pub fn schemas(&self) -> BTreeMap<String, Schema> {
        self.entries.iter().map(|(n, e)| (n.clone(), e.output.clone())).collect()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("black box {0} is not registered")]
    BbNotRegistered(String),
    #[error("black box {name} failed: {message}")]
    BbFailed { name: String, message: String },
    #[error("black box {name} returned a bag violating its declared schema: {detail}")]
    BbOutputInvalid { name: String, detail: String },
    #[error("{op} over an empty bag has no value")]
    EmptyAggregate { op: &'static str },
}

/// Provenance tracking switch. When off, no nodes or bindings are created
/// and tuples carry [`UNTRACKED`].
pub struct Tracker<'g> {
    graph: Option<&'g mut ProvGraph>,
}

impl<'g> Tracker<'g> {
    pub fn on(graph: &'g mut ProvGraph) -> Self {
        Tracker { graph: Some(graph) }
    }

    pub fn off() -> Self {
        Tracker { graph: None }
    }

    pub fn is_on(&self) -> bool {
        self.graph.is_some()
    }

    pub fn extend(&mut self, spec: NodeSpec, preds: &[NodeId]) -> Result<NodeId, GraphError> {
        match &mut self.graph {
            Some(g) => g.extend(spec, preds),
            None => Ok(UNTRACKED),
        }
    }

    pub fn fresh_token(
        &mut self,
        class: NodeClass,
        name: impl Into<String>,
    ) -> Result<NodeId, GraphError> {
        match &mut self.graph {
            Some(g) => g.fresh_token(class, name),
            None => Ok(UNTRACKED),
        }
    }

    pub fn const_node(&mut self, value: AtomValue) -> NodeId {
        match &mut self.graph {
            Some(g) => g.const_node(value),
            None => UNTRACKED,
        }
    }

    pub fn bind(&mut self, instance: &str, ordinal: u64, node: NodeId) {
        if let Some(g) = &mut self.graph {
            g.bind(instance, ordinal, node).expect("bound node exists");
        }
    }

    pub fn node_count(&self) -> usize {
        self.graph.as_ref().map(|g| g.node_count()).unwrap_or(0)
    }
}

/// Evaluator for programs and individual operators.
pub struct Evaluator<'g> {
    pub tracker: Tracker<'g>,
    /// Omit tensor and constant v-nodes when building aggregates.
    pub simplified_agg: bool,
}

impl<'g> Evaluator<'g> {
    pub fn new(tracker: Tracker<'g>) -> Self {
        Evaluator { tracker, simplified_agg: false }
    }

    /// Sorts tuples canonically and registers their bindings.
    pub fn finish_relation(
        &mut self,
        schema: Schema,
        mut tuples: Vec<AnnotatedTuple>,
        instance_id: String,
    ) -> AnnotatedRelation {
        tuples.sort_by_cached_key(|t| (t.strip(), t.pnode));
        for (i, t) in tuples.iter().enumerate() {
            if t.pnode != UNTRACKED {
                self.tracker.bind(&instance_id, i as u64, t.pnode);
            }
        }
        AnnotatedRelation { schema, tuples, instance_id }
    }

    /// Annotates a base bag, minting one fresh token per tuple. Tuples in
    /// nested bags share the outer token.
    pub fn annotate_base(
        &mut self,
        bag: &Bag,
        schema: &Schema,
        class: NodeClass,
        token_prefix: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let mut tuples = Vec::with_capacity(bag.len());
        for t in crate::relmodel::canonicalize(bag) {
            let name = format!("{token_prefix}{}", crate::relmodel::render_tuple_compact(&t));
            let tok = self.tracker.fresh_token(class, name)?;
            tuples.push(ann_tuple_from_plain(&t, tok));
        }
        Ok(self.finish_relation(schema.clone(), tuples, instance_id.to_string()))
    }

    /// Evaluates each statement in order, extending `env` with each alias.
    /// `instance_prefix` scopes the relation instance ids registered in the
    /// graph's bindings.
    pub fn eval_program(
        &mut self,
        env: &mut BTreeMap<String, AnnotatedRelation>,
        prog: &PigProgram,
        bbs: &BbRegistry,
        instance_prefix: &str,
    ) -> Result<(), EvalError> {
        for st in &prog.statements {
            let instance_id = format!("{instance_prefix}:{}", st.alias);
            let lookup = |alias: &String| -> Result<&AnnotatedRelation, EvalError> {
                env.get(alias)
                    .ok_or_else(|| TypeError::UnresolvedAlias(alias.clone()).into())
            };
            let out = match &st.op {
                OpExpr::ForeachProject { src, items, bag_mode } => {
                    self.op_foreach_project(lookup(src)?, items, *bag_mode, &st.alias, &instance_id)?
                }
                OpExpr::ForeachAggregate { src, keys, agg } => {
                    self.op_foreach_aggregate(lookup(src)?, keys, agg, &st.alias, &instance_id)?
                }
                OpExpr::ForeachBb { src, bb, args, flatten } => {
                    self.op_foreach_bb(lookup(src)?, bb, args, *flatten, bbs, &st.alias, &instance_id)?
                }
                OpExpr::Filter { src, cond } => {
                    self.op_filter(lookup(src)?, cond, &st.alias, &instance_id)?
                }
                OpExpr::Join { left, left_key, right, right_key } => self.op_join(
                    lookup(left)?,
                    left_key,
                    lookup(right)?,
                    right_key,
                    &st.alias,
                    &instance_id,
                )?,
                OpExpr::Group { src, key } => {
                    self.op_group(lookup(src)?, src, key, &st.alias, &instance_id)?
                }
                OpExpr::Cogroup { sources } => {
                    let mut resolved = Vec::new();
                    for (src, key) in sources {
                        resolved.push((src.as_str(), lookup(src)?, key));
                    }
                    self.op_cogroup(&resolved, &st.alias, &instance_id)?
                }
                OpExpr::Union { left, right } => {
                    self.op_union(lookup(left)?, lookup(right)?, &st.alias, &instance_id)?
                }
                OpExpr::Distinct { src } => {
                    self.op_distinct(lookup(src)?, &st.alias, &instance_id)?
                }
                OpExpr::Order { src, key } => {
                    self.op_order(lookup(src)?, key, &st.alias, &instance_id)?
                }
            };
            env.insert(st.alias.clone(), out);
        }
        Ok(())
    }

    pub fn op_foreach_project(
        &mut self,
        rel: &AnnotatedRelation,
        items: &[ProjItem],
        bag_mode: bool,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let schema = typecheck::project_schema(alias, &rel.schema, items)?;
        if let Some(flat_idx) = items.iter().position(|i| matches!(i, ProjItem::Flatten { .. })) {
            return self.project_with_flatten(rel, items, flat_idx, schema, instance_id);
        }

        let mut out = Vec::new();
        if bag_mode {
            for t in &rel.tuples {
                let (values, bindings) = project_tuple(&rel.schema, t, items)?;
                let pnode = self.tracker.extend(NodeSpec::plain(Label::Plus), &[t.pnode])?;
                out.push(AnnotatedTuple { values, pnode, value_bindings: bindings });
            }
        } else {
            // Merge outputs with equal projected values: one + node collects
            // every source tuple whose projection matches.
            let mut groups: BTreeMap<Tuple, (Vec<AnnValue>, BTreeMap<usize, NodeId>, Vec<NodeId>)> =
                BTreeMap::new();
            for t in &rel.tuples {
                let (values, bindings) = project_tuple(&rel.schema, t, items)?;
                let key = Tuple(values.iter().map(AnnValue::strip).collect());
                groups
                    .entry(key)
                    .or_insert_with(|| (values, bindings, Vec::new()))
                    .2
                    .push(t.pnode);
            }
            for (_, (values, bindings, sources)) in groups {
                let pnode = self.tracker.extend(NodeSpec::plain(Label::Plus), &sources)?;
                out.push(AnnotatedTuple { values, pnode, value_bindings: bindings });
            }
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    fn project_with_flatten(
        &mut self,
        rel: &AnnotatedRelation,
        items: &[ProjItem],
        flat_idx: usize,
        schema: Schema,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let mut out = Vec::new();
        for t in &rel.tuples {
            let flat_field = match &items[flat_idx] {
                ProjItem::Flatten { field } => field,
                ProjItem::Field(_) => unreachable!(),
            };
            let (src_idx, _, _) = typecheck::resolve_field(&rel.schema, flat_field)?;
            let inner_tuples = match &t.values[src_idx] {
                AnnValue::Bag(ts) => ts.clone(),
                AnnValue::Atom(_) => {
                    return Err(TypeError::NotABag(flat_field.to_string()).into())
                }
            };
            // An empty nested bag makes the outer tuple vanish.
            for inner in inner_tuples {
                let mut values = Vec::new();
                let mut bindings = BTreeMap::new();
                for item in items {
                    match item {
                        ProjItem::Field(f) => {
                            let (i, _, _) = typecheck::resolve_field(&rel.schema, &f.field)?;
                            if let Some(b) = t.value_bindings.get(&i) {
                                bindings.insert(values.len(), *b);
                            }
                            values.push(t.values[i].clone());
                        }
                        ProjItem::Flatten { .. } => {
                            for (j, v) in inner.values.iter().enumerate() {
                                if let Some(b) = inner.value_bindings.get(&j) {
                                    bindings.insert(values.len(), *b);
                                }
                                values.push(v.clone());
                            }
                        }
                    }
                }
                let pnode = self
                    .tracker
                    .extend(NodeSpec::plain(Label::Times), &[t.pnode, inner.pnode])?;
                out.push(AnnotatedTuple { values, pnode, value_bindings: bindings });
            }
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_filter(
        &mut self,
        rel: &AnnotatedRelation,
        cond: &Condition,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        typecheck::check_condition(&rel.schema, cond)?;
        let mut out = Vec::new();
        for t in &rel.tuples {
            if eval_condition(&rel.schema, t, cond)? {
                out.push(t.clone());
            }
        }
        let mut schema = rel.schema.clone();
        schema.name = alias.to_string();
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_join(
        &mut self,
        left: &AnnotatedRelation,
        left_key: &FieldRef,
        right: &AnnotatedRelation,
        right_key: &FieldRef,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let schema = typecheck::join_schema(
            alias,
            &left.schema.name,
            &left.schema,
            left_key,
            &right.schema.name,
            &right.schema,
            right_key,
        )?;
        let (l_idx, _, _) = typecheck::resolve_field(&left.schema, left_key)?;
        let (r_idx, _, _) = typecheck::resolve_field(&right.schema, right_key)?;

        let mut by_key: BTreeMap<AtomValue, Vec<&AnnotatedTuple>> = BTreeMap::new();
        for rt in &right.tuples {
            if let Some(k) = rt.values[r_idx].as_atom() {
                by_key.entry(k.clone()).or_default().push(rt);
            }
        }
        let mut out = Vec::new();
        for lt in &left.tuples {
            let Some(k) = lt.values[l_idx].as_atom() else { continue };
            let Some(matches) = by_key.get(k) else { continue };
            for rt in matches {
                let mut values = lt.values.clone();
                values.extend(rt.values.iter().cloned());
                let mut bindings = lt.value_bindings.clone();
                for (i, b) in &rt.value_bindings {
                    bindings.insert(left.schema.arity() + i, *b);
                }
                let pnode = self
                    .tracker
                    .extend(NodeSpec::plain(Label::Times), &[lt.pnode, rt.pnode])?;
                out.push(AnnotatedTuple { values, pnode, value_bindings: bindings });
            }
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_group(
        &mut self,
        rel: &AnnotatedRelation,
        src_alias: &str,
        key: &GroupKey,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let schema = typecheck::group_schema(alias, src_alias, &rel.schema, key)?;
        let mut groups: BTreeMap<AtomValue, Vec<AnnotatedTuple>> = BTreeMap::new();
        match key {
            GroupKey::Field(f) => {
                let (idx, _, _) = typecheck::resolve_field(&rel.schema, f)?;
                for t in &rel.tuples {
                    let k = t.values[idx].as_atom().expect("atom key").clone();
                    groups.entry(k).or_default().push(t.clone());
                }
            }
            GroupKey::All => {
                if !rel.is_empty() {
                    groups.insert(AtomValue::Text("all".into()), rel.tuples.clone());
                }
            }
        }
        let mut out = Vec::new();
        for (k, members) in groups {
            let pnode = self.delta_over_plus(&members)?;
            out.push(AnnotatedTuple::new(
                vec![AnnValue::Atom(k), AnnValue::Bag(members)],
                pnode,
            ));
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_cogroup(
        &mut self,
        sources: &[(&str, &AnnotatedRelation, &FieldRef)],
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let resolved: Vec<(String, Schema, FieldRef)> = sources
            .iter()
            .map(|(a, r, k)| (a.to_string(), r.schema.clone(), (*k).clone()))
            .collect();
        let schema = typecheck::cogroup_schema(alias, &resolved)?;

        let mut key_indices = Vec::new();
        for (_, rel, key) in sources {
            let (idx, _, _) = typecheck::resolve_field(&rel.schema, key)?;
            key_indices.push(idx);
        }
        let mut keys: std::collections::BTreeSet<AtomValue> = std::collections::BTreeSet::new();
        for ((_, rel, _), idx) in sources.iter().zip(&key_indices) {
            for t in &rel.tuples {
                keys.insert(t.values[*idx].as_atom().expect("atom key").clone());
            }
        }
        let mut out = Vec::new();
        for k in keys {
            let mut values = vec![AnnValue::Atom(k.clone())];
            let mut contributors = Vec::new();
            for ((_, rel, _), idx) in sources.iter().zip(&key_indices) {
                let members: Vec<AnnotatedTuple> = rel
                    .tuples
                    .iter()
                    .filter(|t| t.values[*idx].as_atom() == Some(&k))
                    .cloned()
                    .collect();
                contributors.extend(members.iter().cloned());
                values.push(AnnValue::Bag(members));
            }
            let pnode = self.delta_over_plus(&contributors)?;
            out.push(AnnotatedTuple::new(values, pnode));
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    /// Duplicate elimination spelled as a `δ` over a `+` over the members.
    fn delta_over_plus(&mut self, members: &[AnnotatedTuple]) -> Result<NodeId, EvalError> {
        let preds: Vec<NodeId> = members.iter().map(|t| t.pnode).collect();
        let plus = self.tracker.extend(NodeSpec::plain(Label::Plus), &preds)?;
        Ok(self.tracker.extend(NodeSpec::plain(Label::Delta), &[plus])?)
    }

    pub fn op_foreach_aggregate(
        &mut self,
        rel: &AnnotatedRelation,
        keys: &[NamedField],
        agg: &AggSpec,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let schema = typecheck::aggregate_schema(alias, &rel.schema, keys, agg)?;
        let (bag_idx, _, bag_ty) = typecheck::resolve_field(&rel.schema, &agg.bag_field)?;
        let inner_schema = match bag_ty {
            crate::relmodel::AttrType::Nested(s) => s.clone(),
            _ => unreachable!("typecheck guarantees a bag"),
        };
        let inner_idx = agg.inner.as_ref().map(|attr| inner_schema.attr_index(attr).expect("typechecked attribute"));

        let mut out = Vec::new();
        for t in &rel.tuples {
            let members = match &t.values[bag_idx] {
                AnnValue::Bag(ts) => ts,
                AnnValue::Atom(_) => unreachable!("typecheck guarantees a bag"),
            };
            let member_values: Vec<AtomValue> = match inner_idx {
                Some(i) => members
                    .iter()
                    .map(|m| m.values[i].as_atom().expect("atom attribute").clone())
                    .collect(),
                None => members.iter().map(|_| AtomValue::Int(1)).collect(),
            };
            let value = fold_aggregate(agg.op, &member_values)?;

            let agg_node = if self.simplified_agg {
                let preds: Vec<NodeId> = members.iter().map(|m| m.pnode).collect();
                self.tracker.extend(
                    NodeSpec { class: NodeClass::Plain, label: Label::Agg(agg.op), kind: None },
                    &preds,
                )?
            } else {
                let mut tensors = Vec::with_capacity(members.len());
                for (m, v) in members.iter().zip(&member_values) {
                    let c = self.tracker.const_node(v.clone());
                    if self.tracker.is_on() {
                        tensors.push(self.tracker.extend(
                            NodeSpec::plain(Label::Tensor),
                            &[c, m.pnode],
                        )?);
                    }
                }
                self.tracker.extend(
                    NodeSpec { class: NodeClass::Plain, label: Label::Agg(agg.op), kind: None },
                    &tensors,
                )?
            };

            let mut values = Vec::new();
            for key in keys {
                let (i, _, _) = typecheck::resolve_field(&rel.schema, &key.field)?;
                values.push(t.values[i].clone());
            }
            let agg_field_idx = values.len();
            values.push(AnnValue::Atom(value));
            let pnode = self.tracker.extend(NodeSpec::plain(Label::Plus), &[t.pnode])?;
            let mut tuple = AnnotatedTuple::new(values, pnode);
            tuple.value_bindings.insert(agg_field_idx, agg_node);
            out.push(tuple);
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_foreach_bb(
        &mut self,
        rel: &AnnotatedRelation,
        bb: &str,
        args: &[FieldRef],
        flatten: bool,
        bbs: &BbRegistry,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let entry = bbs.get(bb).ok_or_else(|| EvalError::BbNotRegistered(bb.to_string()))?;
        let schema = typecheck::bb_schema(alias, &rel.schema, bb, args, flatten, &bbs.schemas())?;

        let mut out = Vec::new();
        for t in &rel.tuples {
            let mut arg_values = Vec::with_capacity(args.len());
            // The call depends on the context tuple and on every tuple of
            // each relation-valued argument (one nesting level).
            let mut preds = vec![t.pnode];
            for arg in args {
                let (i, _, _) = typecheck::resolve_field(&rel.schema, arg)?;
                match &t.values[i] {
                    AnnValue::Atom(a) => arg_values.push(Value::Atom(a.clone())),
                    AnnValue::Bag(ts) => {
                        preds.extend(ts.iter().map(|m| m.pnode));
                        arg_values
                            .push(Value::Bag(Bag::new(ts.iter().map(AnnotatedTuple::strip).collect())));
                    }
                }
            }
            let result = (entry.func)(&arg_values)
                .map_err(|message| EvalError::BbFailed { name: bb.to_string(), message })?;
            validate_against_schema(&result, &entry.output).map_err(|e| {
                EvalError::BbOutputInvalid { name: bb.to_string(), detail: e.to_string() }
            })?;
            let bb_node = self.tracker.extend(NodeSpec::plain(Label::Bb(bb.to_string())), &preds)?;

            if flatten {
                for produced in crate::relmodel::canonicalize(&result) {
                    out.push(ann_tuple_from_plain(&produced, bb_node));
                }
            } else {
                let nested: Vec<AnnotatedTuple> = crate::relmodel::canonicalize(&result)
                    .iter()
                    .map(|p| ann_tuple_from_plain(p, bb_node))
                    .collect();
                let pnode = self.tracker.extend(NodeSpec::plain(Label::Plus), &[t.pnode])?;
                out.push(AnnotatedTuple::new(vec![AnnValue::Bag(nested)], pnode));
            }
        }
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_union(
        &mut self,
        left: &AnnotatedRelation,
        right: &AnnotatedRelation,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let schema = typecheck::union_schema(alias, &left.schema, &right.schema)?;
        let mut out = left.tuples.clone();
        out.extend(right.tuples.iter().cloned());
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    pub fn op_distinct(
        &mut self,
        rel: &AnnotatedRelation,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        let mut groups: BTreeMap<Tuple, Vec<AnnotatedTuple>> = BTreeMap::new();
        for t in &rel.tuples {
            groups.entry(t.strip()).or_default().push(t.clone());
        }
        let mut out = Vec::new();
        for (_, members) in groups {
            let pnode = self.delta_over_plus(&members)?;
            let mut kept = members.into_iter().next().expect("non-empty group");
            kept.pnode = pnode;
            out.push(kept);
        }
        let mut schema = rel.schema.clone();
        schema.name = alias.to_string();
        Ok(self.finish_relation(schema, out, instance_id.to_string()))
    }

    /// ORDER is a post-processing step: it has no graph effect and the
    /// relation content is unchanged. Use [`ordered_view`] to inspect the
    /// requested order.
    pub fn op_order(
        &mut self,
        rel: &AnnotatedRelation,
        key: &FieldRef,
        alias: &str,
        instance_id: &str,
    ) -> Result<AnnotatedRelation, EvalError> {
        typecheck::resolve_field(&rel.schema, key)?;
        let mut schema = rel.schema.clone();
        schema.name = alias.to_string();
        Ok(self.finish_relation(schema, rel.tuples.clone(), instance_id.to_string()))
    }
}

/// The ordered list a consumer of ORDER would see; leaves the relation and
/// the graph untouched.
pub fn ordered_view<'r>(
    rel: &'r AnnotatedRelation,
    key: &FieldRef,
) -> Result<Vec<&'r AnnotatedTuple>, EvalError> {
    let (idx, _, _) = typecheck::resolve_field(&rel.schema, key)?;
    let mut view: Vec<&AnnotatedTuple> = rel.tuples.iter().collect();
    view.sort_by(|a, b| a.values[idx].strip().cmp(&b.values[idx].strip()));
    Ok(view)
}

fn ann_tuple_from_plain(t: &Tuple, pnode: NodeId) -> AnnotatedTuple {
    let values = t
        .0
        .iter()
        .map(|v| match v {
            Value::Atom(a) => AnnValue::Atom(a.clone()),
            Value::Bag(b) => AnnValue::Bag(
                crate::relmodel::canonicalize(b)
                    .iter()
                    .map(|inner| ann_tuple_from_plain(inner, pnode))
                    .collect(),
            ),
        })
        .collect();
    AnnotatedTuple::new(values, pnode)
}

fn project_tuple(
    schema: &Schema,
    t: &AnnotatedTuple,
    items: &[ProjItem],
) -> Result<(Vec<AnnValue>, BTreeMap<usize, NodeId>), EvalError> {
    let mut values = Vec::with_capacity(items.len());
    let mut bindings = BTreeMap::new();
    for item in items {
        match item {
            ProjItem::Field(f) => {
                let (i, _, _) = typecheck::resolve_field(schema, &f.field)?;
                if let Some(b) = t.value_bindings.get(&i) {
                    bindings.insert(values.len(), *b);
                }
                values.push(t.values[i].clone());
            }
            ProjItem::Flatten { .. } => unreachable!("flatten handled separately"),
        }
    }
    Ok((values, bindings))
}

fn eval_condition(
    schema: &Schema,
    t: &AnnotatedTuple,
    cond: &Condition,
) -> Result<bool, EvalError> {
    for clause in &cond.clauses {
        let l = operand_value(schema, t, &clause.left)?;
        let r = operand_value(schema, t, &clause.right)?;
        if !clause.op.evaluate(l.cmp(&r)) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn operand_value(
    schema: &Schema,
    t: &AnnotatedTuple,
    operand: &Operand,
) -> Result<AtomValue, EvalError> {
    match operand {
        Operand::Literal(v) => Ok(v.clone()),
        Operand::Field(f) => {
            let (i, name, _) = typecheck::resolve_field(schema, f)?;
            t.values[i]
                .as_atom()
                .cloned()
                .ok_or_else(|| TypeError::BagNotAllowed(name.to_string()).into())
        }
    }
}

fn fold_aggregate(op: AggOp, values: &[AtomValue]) -> Result<AtomValue, EvalError> {
    match op {
        AggOp::Count => Ok(AtomValue::Int(values.len() as i64)),
        AggOp::Sum => match values.first() {
            None => Ok(AtomValue::Int(0)),
            Some(AtomValue::Int(_)) => {
                let mut acc = 0i64;
                for v in values {
                    if let AtomValue::Int(i) = v {
                        acc += i;
                    }
                }
                Ok(AtomValue::Int(acc))
            }
            // Left fold in canonical member order keeps float sums
            // deterministic.
            _ => {
                let mut acc = 0f64;
                for v in values {
                    acc += v.as_f64().expect("numeric aggregate");
                }
                Ok(AtomValue::Float(acc))
            }
        },
        AggOp::Min | AggOp::Max => {
            if values.is_empty() {
                return Err(EvalError::EmptyAggregate { op: if op == AggOp::Min { "MIN" } else { "MAX" } });
            }
            let mut best = values[0].clone();
            for v in &values[1..] {
                let keep_new = if op == AggOp::Min { v < &best } else { v > &best };
                if keep_new {
                    best = v.clone();
                }
            }
            Ok(best)
        }
    }
}

/// Recomputes an aggregate from surviving constant operands; deletion
/// propagation uses this after dropping tensors.
pub fn refold_aggregate(op: AggOp, values: &[AtomValue]) -> Result<AtomValue, EvalError> {
    fold_aggregate(op, values)
}
