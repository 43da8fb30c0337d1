//! Alias resolution and output-schema computation.
//!
//! The schema rules here are shared with the evaluator so the two can never
//! disagree: JOIN emits both join columns qualified as `Left::f` and
//! `Right::f`, GROUP emits `(group, <source alias>)` with the source bag
//! nested, COGROUP emits one nested bag per source, and aggregation emits
//! the named key fields plus one field for the aggregate.

use std::collections::BTreeMap;

use thiserror::Error;

use super::*;
use crate::provgraph::AggOp;
use crate::relmodel::{AtomKind, AttrType, Schema};

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("unresolved alias {0}")]
    UnresolvedAlias(String),
    #[error("relation {alias} has no field {field}")]
    UnknownField { alias: String, field: String },
    #[error("duplicate output attribute {0}")]
    DuplicateOutput(String),
    #[error("{op} cannot aggregate non-numeric field {field}")]
    NonNumericAggregate { op: &'static str, field: String },
    #[error("COUNT takes a bag, not an attribute path")]
    CountWithPath,
    #[error("{op} needs an attribute inside the bag, e.g. {field}.attr")]
    MissingAggregatePath { op: &'static str, field: String },
    #[error("field {0} is not a nested bag")]
    NotABag(String),
    #[error("field {0} is a nested bag and cannot be used here")]
    BagNotAllowed(String),
    #[error("join keys {left} and {right} have different kinds")]
    KeyKindMismatch { left: String, right: String },
    #[error("join of {0} with itself needs a projected copy under a new alias")]
    SelfJoin(String),
    #[error("cogroup sources must be distinct; {0} repeats")]
    DuplicateCogroupSource(String),
    #[error("grouping key {0} must be an atom field")]
    NonAtomKey(String),
    #[error("union operands have different schemas: {0} vs {1}")]
    UnionSchemaMismatch(String, String),
    #[error("comparison mixes kinds: {left} vs {right}")]
    ComparisonKindMismatch { left: String, right: String },
    #[error("black box {0} is not registered")]
    UnknownBb(String),
}

/// Resolves a field reference to (index, name, type) in `schema`.
pub(crate) fn resolve_field<'s>(
    schema: &'s Schema,
    field: &FieldRef,
) -> Result<(usize, &'s str, &'s AttrType), TypeError> {
    match field {
        FieldRef::Name(name) => schema
            .attr_index(name)
            .map(|i| {
                let (n, t) = &schema.attributes[i];
                (i, n.as_str(), t)
            })
            .ok_or_else(|| TypeError::UnknownField {
                alias: schema.name.clone(),
                field: name.clone(),
            }),
        FieldRef::Position(k) => schema
            .attributes
            .get(*k)
            .map(|(n, t)| (*k, n.as_str(), t))
            .ok_or_else(|| TypeError::UnknownField {
                alias: schema.name.clone(),
                field: format!("${k}"),
            }),
    }
}

fn atom_kind_of(schema: &Schema, field: &FieldRef) -> Result<AtomKind, TypeError> {
    let (_, name, ty) = resolve_field(schema, field)?;
    match ty {
        AttrType::Atom(kind) => Ok(*kind),
        AttrType::Nested(_) => Err(TypeError::BagNotAllowed(name.to_string())),
    }
}

fn output_name(field: &FieldRef, rename: &Option<String>, schema: &Schema) -> Result<String, TypeError> {
    if let Some(r) = rename {
        return Ok(r.clone());
    }
    match field {
        FieldRef::Name(n) => Ok(n.clone()),
        FieldRef::Position(_) => {
            let (_, name, _) = resolve_field(schema, field)?;
            Ok(name.to_string())
        }
    }
}

fn ensure_unique(attrs: &[(String, AttrType)]) -> Result<(), TypeError> {
    let mut seen = std::collections::BTreeSet::new();
    for (name, _) in attrs {
        if !seen.insert(name.clone()) {
            return Err(TypeError::DuplicateOutput(name.clone()));
        }
    }
    Ok(())
}

pub(crate) fn project_schema(
    alias: &str,
    src: &Schema,
    items: &[ProjItem],
) -> Result<Schema, TypeError> {
    let mut attrs = Vec::new();
    for item in items {
        match item {
            ProjItem::Field(f) => {
                let (_, _, ty) = resolve_field(src, &f.field)?;
                attrs.push((output_name(&f.field, &f.rename, src)?, ty.clone()));
            }
            ProjItem::Flatten { field } => {
                let (_, name, ty) = resolve_field(src, field)?;
                match ty {
                    AttrType::Nested(inner) => {
                        for (n, t) in &inner.attributes {
                            attrs.push((n.clone(), t.clone()));
                        }
                    }
                    AttrType::Atom(_) => return Err(TypeError::NotABag(name.to_string())),
                }
            }
        }
    }
    ensure_unique(&attrs)?;
    Ok(Schema::new(alias, attrs))
}

pub(crate) fn aggregate_schema(
    alias: &str,
    src: &Schema,
    keys: &[NamedField],
    agg: &AggSpec,
) -> Result<Schema, TypeError> {
    let mut attrs = Vec::new();
    for key in keys {
        let (_, name, ty) = resolve_field(src, &key.field)?;
        match ty {
            AttrType::Atom(_) => {}
            AttrType::Nested(_) => return Err(TypeError::BagNotAllowed(name.to_string())),
        }
        attrs.push((output_name(&key.field, &key.rename, src)?, ty.clone()));
    }
    let (_, bag_name, bag_ty) = resolve_field(src, &agg.bag_field)?;
    let inner_schema = match bag_ty {
        AttrType::Nested(inner) => inner,
        AttrType::Atom(_) => return Err(TypeError::NotABag(bag_name.to_string())),
    };
    let value_type = match (agg.op, &agg.inner) {
        (AggOp::Count, None) => AttrType::Atom(AtomKind::Int),
        (AggOp::Count, Some(_)) => return Err(TypeError::CountWithPath),
        (op, None) => {
            return Err(TypeError::MissingAggregatePath {
                op: op_name(op),
                field: bag_name.to_string(),
            })
        }
        (op, Some(attr)) => {
            let ty = inner_schema.attr_type(attr).ok_or_else(|| TypeError::UnknownField {
                alias: inner_schema.name.clone(),
                field: attr.clone(),
            })?;
            if !ty.is_numeric() {
                return Err(TypeError::NonNumericAggregate {
                    op: op_name(op),
                    field: attr.clone(),
                });
            }
            ty.clone()
        }
    };
    attrs.push((agg.rename.clone(), value_type));
    ensure_unique(&attrs)?;
    Ok(Schema::new(alias, attrs))
}

fn op_name(op: AggOp) -> &'static str {
    match op {
        AggOp::Sum => "SUM",
        AggOp::Count => "COUNT",
        AggOp::Min => "MIN",
        AggOp::Max => "MAX",
    }
}

pub(crate) fn join_schema(
    alias: &str,
    left_alias: &str,
    left: &Schema,
    left_key: &FieldRef,
    right_alias: &str,
    right: &Schema,
    right_key: &FieldRef,
) -> Result<Schema, TypeError> {
    if left_alias == right_alias {
        return Err(TypeError::SelfJoin(left_alias.to_string()));
    }
    let lk = atom_kind_of(left, left_key)?;
    let rk = atom_kind_of(right, right_key)?;
    if lk != rk {
        return Err(TypeError::KeyKindMismatch {
            left: left_key.to_string(),
            right: right_key.to_string(),
        });
    }
    let (l_idx, _, _) = resolve_field(left, left_key)?;
    let (r_idx, _, _) = resolve_field(right, right_key)?;

    // Join columns come out qualified on both sides; other columns keep
    // their names unless the two sides collide, in which case both get
    // qualified as well.
    let mut attrs: Vec<(String, AttrType)> = Vec::new();
    let qualify = |side: &str, name: &str| format!("{side}::{name}");
    let mut names: Vec<(String, String)> = Vec::new(); // (final name, side)
    for (i, (n, _)) in left.attributes.iter().enumerate() {
        let name = if i == l_idx { qualify(left_alias, n) } else { n.clone() };
        names.push((name, "L".into()));
    }
    for (i, (n, _)) in right.attributes.iter().enumerate() {
        let name = if i == r_idx { qualify(right_alias, n) } else { n.clone() };
        names.push((name, "R".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (n, _) in &names {
        *counts.entry(n.as_str()).or_insert(0) += 1;
    }
    let colliding: std::collections::BTreeSet<String> = counts
        .iter()
        .filter(|(_, c)| **c > 1)
        .map(|(n, _)| n.to_string())
        .collect();

    for (i, (n, t)) in left.attributes.iter().enumerate() {
        let base = if i == l_idx { qualify(left_alias, n) } else { n.clone() };
        let final_name = if colliding.contains(&base) { qualify(left_alias, n) } else { base };
        attrs.push((final_name, t.clone()));
    }
    for (i, (n, t)) in right.attributes.iter().enumerate() {
        let base = if i == r_idx { qualify(right_alias, n) } else { n.clone() };
        let final_name = if colliding.contains(&base) { qualify(right_alias, n) } else { base };
        attrs.push((final_name, t.clone()));
    }
    ensure_unique(&attrs)?;
    Ok(Schema::new(alias, attrs))
}

pub(crate) fn group_schema(
    alias: &str,
    src_alias: &str,
    src: &Schema,
    key: &GroupKey,
) -> Result<Schema, TypeError> {
    let key_type = match key {
        GroupKey::Field(f) => {
            let (_, name, ty) = resolve_field(src, f)?;
            match ty {
                AttrType::Atom(kind) => AttrType::Atom(*kind),
                AttrType::Nested(_) => return Err(TypeError::NonAtomKey(name.to_string())),
            }
        }
        GroupKey::All => AttrType::Atom(AtomKind::Text),
    };
    let mut nested = src.clone();
    nested.name = src_alias.to_string();
    Ok(Schema::new(
        alias,
        vec![("group".to_string(), key_type), (src_alias.to_string(), AttrType::Nested(nested))],
    ))
}

pub(crate) fn cogroup_schema(
    alias: &str,
    sources: &[(String, Schema, FieldRef)],
) -> Result<Schema, TypeError> {
    let mut seen = std::collections::BTreeSet::new();
    for (src_alias, _, _) in sources {
        if !seen.insert(src_alias.clone()) {
            return Err(TypeError::DuplicateCogroupSource(src_alias.clone()));
        }
    }
    let first_kind = {
        let (_, schema, key) = &sources[0];
        atom_kind_of(schema, key)?
    };
    for (_, schema, key) in &sources[1..] {
        let kind = atom_kind_of(schema, key)?;
        if kind != first_kind {
            return Err(TypeError::KeyKindMismatch {
                left: sources[0].2.to_string(),
                right: key.to_string(),
            });
        }
    }
    let mut attrs = vec![("group".to_string(), AttrType::Atom(first_kind))];
    for (src_alias, schema, _) in sources {
        let mut nested = schema.clone();
        nested.name = src_alias.clone();
        attrs.push((src_alias.clone(), AttrType::Nested(nested)));
    }
    ensure_unique(&attrs)?;
    Ok(Schema::new(alias, attrs))
}

pub(crate) fn union_schema(
    alias: &str,
    left: &Schema,
    right: &Schema,
) -> Result<Schema, TypeError> {
    if left.attributes != right.attributes {
        return Err(TypeError::UnionSchemaMismatch(left.name.clone(), right.name.clone()));
    }
    let mut out = left.clone();
    out.name = alias.to_string();
    Ok(out)
}

pub(crate) fn bb_schema(
    alias: &str,
    src: &Schema,
    bb: &str,
    args: &[FieldRef],
    flatten: bool,
    bbs: &BTreeMap<String, Schema>,
) -> Result<Schema, TypeError> {
    for arg in args {
        resolve_field(src, arg)?;
    }
    let out = bbs.get(bb).ok_or_else(|| TypeError::UnknownBb(bb.to_string()))?;
    if flatten {
        Ok(Schema::new(alias, out.attributes.clone()))
    } else {
        let mut nested = out.clone();
        nested.name = bb.to_string();
        Ok(Schema::new(alias, vec![(bb.to_string(), AttrType::Nested(nested))]))
    }
}

pub(crate) fn check_condition(schema: &Schema, cond: &Condition) -> Result<(), TypeError> {
    for clause in &cond.clauses {
        let lk = operand_kind(schema, &clause.left)?;
        let rk = operand_kind(schema, &clause.right)?;
        if lk != rk {
            return Err(TypeError::ComparisonKindMismatch {
                left: lk.to_string(),
                right: rk.to_string(),
            });
        }
    }
    Ok(())
}

fn operand_kind(schema: &Schema, operand: &Operand) -> Result<AtomKind, TypeError> {
    match operand {
        Operand::Field(f) => atom_kind_of(schema, f),
        Operand::Literal(v) => Ok(v.kind()),
    }
}

fn statement_schema(
    st: &Statement,
    schemas: &BTreeMap<String, Schema>,
    bbs: &BTreeMap<String, Schema>,
) -> Result<Schema, TypeError> {
    let lookup = |alias: &str| -> Result<&Schema, TypeError> {
        schemas.get(alias).ok_or_else(|| TypeError::UnresolvedAlias(alias.to_string()))
    };
    match &st.op {
        OpExpr::ForeachProject { src, items, .. } => {
            project_schema(&st.alias, lookup(src)?, items)
        }
        OpExpr::ForeachAggregate { src, keys, agg } => {
            aggregate_schema(&st.alias, lookup(src)?, keys, agg)
        }
        OpExpr::ForeachBb { src, bb, args, flatten } => {
            bb_schema(&st.alias, lookup(src)?, bb, args, *flatten, bbs)
        }
        OpExpr::Filter { src, cond } => {
            let schema = lookup(src)?;
            check_condition(schema, cond)?;
            let mut out = schema.clone();
            out.name = st.alias.clone();
            Ok(out)
        }
        OpExpr::Join { left, left_key, right, right_key } => join_schema(
            &st.alias,
            left,
            lookup(left)?,
            left_key,
            right,
            lookup(right)?,
            right_key,
        ),
        OpExpr::Group { src, key } => group_schema(&st.alias, src, lookup(src)?, key),
        OpExpr::Cogroup { sources } => {
            let mut resolved = Vec::new();
            for (src, key) in sources {
                resolved.push((src.clone(), lookup(src)?.clone(), key.clone()));
            }
            cogroup_schema(&st.alias, &resolved)
        }
        OpExpr::Union { left, right } => union_schema(&st.alias, lookup(left)?, lookup(right)?),
        OpExpr::Distinct { src } | OpExpr::Order { src, .. } => {
            let schema = lookup(src)?;
            if let OpExpr::Order { key, .. } = &st.op {
                resolve_field(schema, key)?;
            }
            let mut out = schema.clone();
            out.name = st.alias.clone();
            Ok(out)
        }
    }
}

/// Resolves every alias and computes output schemas for each statement.
/// `env` holds the free relations (inputs and state); `bbs` maps black-box
/// names to their output schemas. Returns the schema of every assigned
/// alias, in a deterministic map.
pub fn resolve_and_typecheck(
    prog: &PigProgram,
    env: &BTreeMap<String, Schema>,
    bbs: &BTreeMap<String, Schema>,
) -> Result<BTreeMap<String, Schema>, TypeError> {
    let mut schemas = env.clone();
    let mut assigned = BTreeMap::new();
    for st in &prog.statements {
        let schema = statement_schema(st, &schemas, bbs)?;
        schemas.insert(st.alias.clone(), schema.clone());
        assigned.insert(st.alias.clone(), schema);
    }
    Ok(assigned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pigparse::parse;

    fn env() -> BTreeMap<String, Schema> {
        let mut env = BTreeMap::new();
        env.insert(
            "Cars".to_string(),
            Schema::new(
                "Cars",
                vec![
                    ("CarId".into(), AttrType::Atom(AtomKind::Text)),
                    ("Model".into(), AttrType::Atom(AtomKind::Text)),
                ],
            ),
        );
        env.insert(
            "ReqModel".to_string(),
            Schema::new("ReqModel", vec![("Model".into(), AttrType::Atom(AtomKind::Text))]),
        );
        env
    }

    #[test]
    fn join_emits_both_key_columns() {
        let prog = parse("Inventory = JOIN Cars BY Model, ReqModel BY Model;").unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        let schema = &out["Inventory"];
        let names: Vec<&str> = schema.attributes.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["CarId", "Cars::Model", "ReqModel::Model"]);
    }

    #[test]
    fn group_emits_group_and_nested_source() {
        let prog = parse("CarsByModel = GROUP Cars BY Model;").unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        let schema = &out["CarsByModel"];
        assert_eq!(schema.attributes[0].0, "group");
        assert_eq!(schema.attributes[1].0, "Cars");
        assert!(matches!(schema.attributes[1].1, AttrType::Nested(_)));
    }

    #[test]
    fn unresolved_alias_reported() {
        let prog = parse("B = FILTER Z BY f1 == 3;").unwrap();
        let err = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, TypeError::UnresolvedAlias("Z".into()));
    }

    #[test]
    fn aggregate_requires_numeric_for_sum() {
        let prog = parse(
            "G = GROUP Cars BY Model;\nS = FOREACH G GENERATE group AS Model, SUM(Cars.CarId) AS X;",
        )
        .unwrap();
        let err = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, TypeError::NonNumericAggregate { op: "SUM", .. }));
    }

    #[test]
    fn count_yields_int_and_group_all_text_key() {
        let prog = parse(
            "G = GROUP Cars ALL;\nN = FOREACH G GENERATE COUNT(Cars) AS NumCars;",
        )
        .unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        assert_eq!(out["G"].attributes[0], ("group".to_string(), AttrType::Atom(AtomKind::Text)));
        assert_eq!(
            out["N"].attributes[0],
            ("NumCars".to_string(), AttrType::Atom(AtomKind::Int))
        );
    }

    #[test]
    fn join_key_kind_mismatch_rejected() {
        let mut e = env();
        e.insert(
            "Nums".to_string(),
            Schema::new("Nums", vec![("Model".into(), AttrType::Atom(AtomKind::Int))]),
        );
        let prog = parse("J = JOIN Cars BY Model, Nums BY Model;").unwrap();
        let err = resolve_and_typecheck(&prog, &e, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, TypeError::KeyKindMismatch { .. }));
    }

    #[test]
    fn rebinding_a_state_relation_sees_the_old_value() {
        // A statement may assign a name that already exists in the
        // environment; its right-hand side refers to the old value.
        let prog = parse("Cars = DISTINCT Cars;").unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        assert_eq!(out["Cars"].attributes.len(), 2);
    }

    #[test]
    fn typecheck_is_deterministic() {
        let prog = parse(
            "J = JOIN Cars BY Model, ReqModel BY Model;\nG = GROUP J BY CarId;",
        )
        .unwrap();
        let a = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        let b = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flatten_splices_nested_attributes() {
        let prog = parse(
            "G = GROUP Cars BY Model;\nF = FOREACH G GENERATE group, FLATTEN(Cars);",
        )
        .unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap();
        let names: Vec<&str> = out["F"].attributes.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["group", "CarId", "Model"]);
    }

    #[test]
    fn bb_schema_comes_from_registry() {
        let mut bbs = BTreeMap::new();
        bbs.insert(
            "CalcBid".to_string(),
            Schema::new("CalcBid", vec![("Amount".into(), AttrType::Atom(AtomKind::Float))]),
        );
        let prog = parse(
            "G = GROUP Cars BY Model;\nB = FOREACH G GENERATE FLATTEN(CalcBid(Cars));",
        )
        .unwrap();
        let out = resolve_and_typecheck(&prog, &env(), &bbs).unwrap();
        assert_eq!(out["B"].attributes[0].0, "Amount");

        let err = resolve_and_typecheck(&prog, &env(), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, TypeError::UnknownBb("CalcBid".into()));
    }
}
