//! Shared test support: an independent annotated-relational evaluator that
//! computes provenance polynomials directly (no graph), plus random program
//! and workflow generators. The oracle deliberately re-derives field
//! resolution and operator semantics so it shares no evaluation path with
//! the engine it checks.

#![allow(dead_code)]

pub mod oracle {
    use std::collections::BTreeMap;

    use lipstick::pigparse::{
        AggSpec, CmpOp, Condition, FieldRef, GroupKey, OpExpr, Operand, PigProgram, ProjItem,
    };
    use lipstick::provgraph::{AggOp, Polynomial};
    use lipstick::relmodel::{AtomValue, Bag, Tuple, Value};

    #[derive(Debug, Clone)]
    pub enum OValue {
        Atom(AtomValue),
        Bag(ORel),
    }

    #[derive(Debug, Clone)]
    pub struct OTuple {
        pub values: Vec<OValue>,
        pub poly: Polynomial,
    }

    #[derive(Debug, Clone)]
    pub struct ORel {
        pub names: Vec<String>,
        pub tuples: Vec<OTuple>,
    }

    impl OValue {
        fn strip(&self) -> Value {
            match self {
                OValue::Atom(a) => Value::Atom(a.clone()),
                OValue::Bag(r) => {
                    Value::Bag(Bag::new(r.tuples.iter().map(OTuple::strip).collect()))
                }
            }
        }

        fn atom(&self) -> &AtomValue {
            match self {
                OValue::Atom(a) => a,
                OValue::Bag(_) => panic!("expected atom"),
            }
        }
    }

    impl OTuple {
        pub fn strip(&self) -> Tuple {
            Tuple(self.values.iter().map(OValue::strip).collect())
        }
    }

    impl ORel {
        /// Canonical multiset of (stripped value, polynomial) pairs.
        pub fn value_poly_pairs(&self) -> Vec<(Tuple, Polynomial)> {
            let mut pairs: Vec<(Tuple, Polynomial)> =
                self.tuples.iter().map(|t| (t.strip(), t.poly.clone())).collect();
            pairs.sort();
            pairs
        }
    }

    fn idx(names: &[String], f: &FieldRef) -> usize {
        match f {
            FieldRef::Position(k) => *k,
            FieldRef::Name(n) => names
                .iter()
                .position(|x| x == n)
                .unwrap_or_else(|| panic!("oracle: no field {n} in {names:?}")),
        }
    }

    fn cmp_eval(op: CmpOp, l: &AtomValue, r: &AtomValue) -> bool {
        op.evaluate(l.cmp(r))
    }

    fn out_name(names: &[String], f: &FieldRef, rename: &Option<String>) -> String {
        match rename {
            Some(r) => r.clone(),
            None => match f {
                FieldRef::Name(n) => n.clone(),
                FieldRef::Position(k) => names[*k].clone(),
            },
        }
    }

    /// Evaluates the program over polynomial-annotated relations, one
    /// operator at a time, following the semiring rules directly:
    /// projection sums alternatives, join multiplies, grouping and
    /// duplicate elimination apply δ over the member sum, flatten
    /// multiplies outer and inner.
    pub fn eval_program(
        env: &mut BTreeMap<String, ORel>,
        prog: &PigProgram,
    ) {
        for st in &prog.statements {
            let rel = match &st.op {
                OpExpr::ForeachProject { src, items, bag_mode } => {
                    let src = env[src].clone();
                    if items.iter().any(|i| matches!(i, ProjItem::Flatten { .. })) {
                        flatten_project(&src, items)
                    } else {
                        project(&src, items, *bag_mode)
                    }
                }
                OpExpr::ForeachAggregate { src, keys, agg } => aggregate(&env[src], keys, agg),
                OpExpr::Filter { src, cond } => filter(&env[src], cond),
                OpExpr::Join { left, left_key, right, right_key } => {
                    join(left, &env[left], left_key, right, &env[right], right_key)
                }
                OpExpr::Group { src, key } => group(src, &env[src], key),
                OpExpr::Cogroup { sources } => {
                    let resolved: Vec<(&str, &ORel, &FieldRef)> = sources
                        .iter()
                        .map(|(s, k)| (s.as_str(), &env[s], k))
                        .collect();
                    cogroup(&resolved)
                }
                OpExpr::Union { left, right } => {
                    let mut out = env[left].clone();
                    out.tuples.extend(env[right].tuples.iter().cloned());
                    out
                }
                OpExpr::Distinct { src } => distinct(&env[src]),
                OpExpr::Order { src, .. } => env[src].clone(),
                OpExpr::ForeachBb { .. } => panic!("oracle does not evaluate black boxes"),
            };
            env.insert(st.alias.clone(), rel);
        }
    }

    fn project(src: &ORel, items: &[ProjItem], bag_mode: bool) -> ORel {
        let mut names = Vec::new();
        let mut indices = Vec::new();
        for item in items {
            match item {
                ProjItem::Field(f) => {
                    indices.push(idx(&src.names, &f.field));
                    names.push(out_name(&src.names, &f.field, &f.rename));
                }
                ProjItem::Flatten { .. } => unreachable!(),
            }
        }
        if bag_mode {
            let tuples = src
                .tuples
                .iter()
                .map(|t| OTuple {
                    values: indices.iter().map(|i| t.values[*i].clone()).collect(),
                    poly: t.poly.clone(),
                })
                .collect();
            return ORel { names, tuples };
        }
        let mut groups: BTreeMap<Tuple, (Vec<OValue>, Polynomial)> = BTreeMap::new();
        for t in &src.tuples {
            let values: Vec<OValue> = indices.iter().map(|i| t.values[*i].clone()).collect();
            let key = Tuple(values.iter().map(OValue::strip).collect());
            groups
                .entry(key)
                .and_modify(|(_, p)| *p = p.add(&t.poly))
                .or_insert_with(|| (values, t.poly.clone()));
        }
        let tuples =
            groups.into_values().map(|(values, poly)| OTuple { values, poly }).collect();
        ORel { names, tuples }
    }

    fn flatten_project(src: &ORel, items: &[ProjItem]) -> ORel {
        let mut names = Vec::new();
        for item in items {
            match item {
                ProjItem::Field(f) => names.push(out_name(&src.names, &f.field, &f.rename)),
                ProjItem::Flatten { field } => {
                    let i = idx(&src.names, field);
                    // nested names come from any tuple's bag; shapes agree
                    if let Some(t) = src.tuples.first() {
                        if let OValue::Bag(b) = &t.values[i] {
                            names.extend(b.names.iter().cloned());
                        }
                    }
                }
            }
        }
        let mut tuples = Vec::new();
        for t in &src.tuples {
            let flat_idx = items
                .iter()
                .position(|i| matches!(i, ProjItem::Flatten { .. }))
                .expect("one flatten item");
            let ProjItem::Flatten { field } = &items[flat_idx] else { unreachable!() };
            let bag = match &t.values[idx(&src.names, field)] {
                OValue::Bag(b) => b.clone(),
                OValue::Atom(_) => panic!("flatten over an atom"),
            };
            for inner in &bag.tuples {
                let mut values = Vec::new();
                for item in items {
                    match item {
                        ProjItem::Field(f) => {
                            values.push(t.values[idx(&src.names, &f.field)].clone())
                        }
                        ProjItem::Flatten { .. } => values.extend(inner.values.iter().cloned()),
                    }
                }
                tuples.push(OTuple { values, poly: t.poly.mul(&inner.poly) });
            }
        }
        // recompute names when the source was empty
        if src.tuples.is_empty() {
            return ORel { names, tuples };
        }
        ORel { names, tuples }
    }

    fn filter(src: &ORel, cond: &Condition) -> ORel {
        let tuples = src
            .tuples
            .iter()
            .filter(|t| {
                cond.clauses.iter().all(|c| {
                    let value = |o: &Operand| match o {
                        Operand::Literal(v) => v.clone(),
                        Operand::Field(f) => t.values[idx(&src.names, f)].atom().clone(),
                    };
                    cmp_eval(c.op, &value(&c.left), &value(&c.right))
                })
            })
            .cloned()
            .collect();
        ORel { names: src.names.clone(), tuples }
    }

    fn join(
        l_alias: &str,
        left: &ORel,
        lk: &FieldRef,
        r_alias: &str,
        right: &ORel,
        rk: &FieldRef,
    ) -> ORel {
        let li = idx(&left.names, lk);
        let ri = idx(&right.names, rk);
        // name rule mirrors the engine: keys qualified, collisions qualified
        let qualified = |side: &str, n: &str| format!("{side}::{n}");
        let mut raw: Vec<String> = Vec::new();
        for (i, n) in left.names.iter().enumerate() {
            raw.push(if i == li { qualified(l_alias, n) } else { n.clone() });
        }
        for (i, n) in right.names.iter().enumerate() {
            raw.push(if i == ri { qualified(r_alias, n) } else { n.clone() });
        }
        let mut names = Vec::new();
        for (pos, n) in raw.iter().enumerate() {
            if raw.iter().filter(|x| *x == n).count() > 1 {
                let (side, orig) = if pos < left.names.len() {
                    (l_alias, &left.names[pos])
                } else {
                    (r_alias, &right.names[pos - left.names.len()])
                };
                names.push(qualified(side, orig));
            } else {
                names.push(n.clone());
            }
        }
        let mut tuples = Vec::new();
        for lt in &left.tuples {
            for rt in &right.tuples {
                if lt.values[li].atom() == rt.values[ri].atom() {
                    let mut values = lt.values.clone();
                    values.extend(rt.values.iter().cloned());
                    tuples.push(OTuple { values, poly: lt.poly.mul(&rt.poly) });
                }
            }
        }
        ORel { names, tuples }
    }

    fn group(src_alias: &str, src: &ORel, key: &GroupKey) -> ORel {
        let mut groups: BTreeMap<AtomValue, Vec<OTuple>> = BTreeMap::new();
        match key {
            GroupKey::Field(f) => {
                let i = idx(&src.names, f);
                for t in &src.tuples {
                    groups.entry(t.values[i].atom().clone()).or_default().push(t.clone());
                }
            }
            GroupKey::All => {
                if !src.tuples.is_empty() {
                    groups.insert(AtomValue::Text("all".into()), src.tuples.clone());
                }
            }
        }
        let names = vec!["group".to_string(), src_alias.to_string()];
        let tuples = groups
            .into_iter()
            .map(|(k, members)| {
                let sum = Polynomial::sum(members.iter().map(|m| &m.poly));
                OTuple {
                    values: vec![
                        OValue::Atom(k),
                        OValue::Bag(ORel { names: src.names.clone(), tuples: members }),
                    ],
                    poly: Polynomial::delta(&sum),
                }
            })
            .collect();
        ORel { names, tuples }
    }

    fn cogroup(sources: &[(&str, &ORel, &FieldRef)]) -> ORel {
        let mut keys: std::collections::BTreeSet<AtomValue> = Default::default();
        for (_, rel, key) in sources {
            let i = idx(&rel.names, key);
            for t in &rel.tuples {
                keys.insert(t.values[i].atom().clone());
            }
        }
        let mut names = vec!["group".to_string()];
        for (alias, _, _) in sources {
            names.push(alias.to_string());
        }
        let mut tuples = Vec::new();
        for k in keys {
            let mut values = vec![OValue::Atom(k.clone())];
            let mut sum = Polynomial::zero();
            for (_, rel, key) in sources {
                let i = idx(&rel.names, key);
                let members: Vec<OTuple> = rel
                    .tuples
                    .iter()
                    .filter(|t| t.values[i].atom() == &k)
                    .cloned()
                    .collect();
                sum = sum.add(&Polynomial::sum(members.iter().map(|m| &m.poly)));
                values.push(OValue::Bag(ORel { names: rel.names.clone(), tuples: members }));
            }
            tuples.push(OTuple { values, poly: Polynomial::delta(&sum) });
        }
        ORel { names, tuples }
    }

    fn aggregate(
        src: &ORel,
        keys: &[lipstick::pigparse::NamedField],
        agg: &AggSpec,
    ) -> ORel {
        let bag_i = idx(&src.names, &agg.bag_field);
        let mut names: Vec<String> = keys
            .iter()
            .map(|k| out_name(&src.names, &k.field, &k.rename))
            .collect();
        names.push(agg.rename.clone());
        let tuples = src
            .tuples
            .iter()
            .map(|t| {
                let OValue::Bag(bag) = &t.values[bag_i] else { panic!("aggregate over atom") };
                let member_values: Vec<AtomValue> = match &agg.inner {
                    None => bag.tuples.iter().map(|_| AtomValue::Int(1)).collect(),
                    Some(attr) => {
                        let ai = bag
                            .names
                            .iter()
                            .position(|n| n == attr)
                            .expect("aggregate attribute exists");
                        bag.tuples.iter().map(|m| m.values[ai].atom().clone()).collect()
                    }
                };
                let value = fold(agg.op, &member_values);
                let mut values: Vec<OValue> = keys
                    .iter()
                    .map(|k| t.values[idx(&src.names, &k.field)].clone())
                    .collect();
                values.push(OValue::Atom(value));
                OTuple { values, poly: t.poly.clone() }
            })
            .collect();
        ORel { names, tuples }
    }

    fn fold(op: AggOp, values: &[AtomValue]) -> AtomValue {
        match op {
            AggOp::Count => AtomValue::Int(values.len() as i64),
            AggOp::Sum => match values.first() {
                None => AtomValue::Int(0),
                Some(AtomValue::Int(_)) => AtomValue::Int(
                    values
                        .iter()
                        .map(|v| match v {
                            AtomValue::Int(i) => *i,
                            _ => panic!("mixed sum"),
                        })
                        .sum(),
                ),
                _ => AtomValue::Float(values.iter().map(|v| v.as_f64().unwrap()).sum()),
            },
            AggOp::Min => values.iter().min().expect("non-empty").clone(),
            AggOp::Max => values.iter().max().expect("non-empty").clone(),
        }
    }

    fn distinct(src: &ORel) -> ORel {
        let mut groups: BTreeMap<Tuple, (Vec<OValue>, Polynomial)> = BTreeMap::new();
        for t in &src.tuples {
            groups
                .entry(t.strip())
                .and_modify(|(_, p)| *p = p.add(&t.poly))
                .or_insert_with(|| (t.values.clone(), t.poly.clone()));
        }
        let tuples = groups
            .into_values()
            .map(|(values, sum)| OTuple { values, poly: Polynomial::delta(&sum) })
            .collect();
        ORel { names: src.names.clone(), tuples }
    }
}

pub mod progen {
    //! Random Pig programs over small integer relations, shaped so both the
    //! engine and the oracle accept them: aggregate outputs are terminal,
    //! MIN/MAX only aggregate never-empty GROUP bags, and join sources are
    //! distinct aliases.

    use lipstick::pigparse::{
        AggSpec, CmpOp, Comparison, Condition, FieldRef, GroupKey, NamedField, OpExpr, Operand,
        PigProgram, ProjItem, Statement,
    };
    use lipstick::provgraph::AggOp;
    use lipstick::relmodel::{int, AtomKind, AtomValue, AttrType, Bag, Schema, Tuple};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone)]
    pub enum Shape {
        Flat { names: Vec<String> },
        /// group key at position 0 plus one or more nested bags; per bag:
        /// (inner attribute names, never-empty)
        Grouped { bags: Vec<(Vec<String>, bool)> },
    }

    #[derive(Debug, Clone)]
    pub struct GenProgram {
        pub bases: Vec<(String, Schema, Bag)>,
        pub prog: PigProgram,
        /// Shape of every statement's output, in statement order.
        pub shapes: Vec<(String, Shape)>,
    }

    fn flat_schema(name: &str, fields: &[String]) -> Schema {
        Schema::new(
            name,
            fields.iter().map(|f| (f.clone(), AttrType::Atom(AtomKind::Int))).collect(),
        )
    }

    pub fn random_program(rng: &mut ChaCha8Rng, max_ops: usize) -> GenProgram {
        let n_bases = rng.gen_range(1..=3);
        let base_fields: Vec<String> = vec!["a".into(), "b".into()];
        let mut bases = Vec::new();
        let mut aliases: Vec<(String, Shape)> = Vec::new();
        for i in 0..n_bases {
            let name = format!("R{i}");
            let rows = rng.gen_range(0..=8);
            let bag = Bag::new(
                (0..rows)
                    .map(|_| Tuple(vec![int(rng.gen_range(0..4)), int(rng.gen_range(0..4))]))
                    .collect(),
            );
            bases.push((name.clone(), flat_schema(&name, &base_fields), bag));
            aliases.push((name, Shape::Flat { names: base_fields.clone() }));
        }

        let mut statements = Vec::new();
        let mut shapes: Vec<(String, Shape)> = Vec::new();
        let mut fresh = 0usize;
        let n_ops = rng.gen_range(1..=max_ops);
        for step in 0..n_ops {
            let alias = format!("X{step}");
            let flat: Vec<usize> = aliases
                .iter()
                .enumerate()
                .filter(|(_, (_, s))| matches!(s, Shape::Flat { .. }))
                .map(|(i, _)| i)
                .collect();
            let grouped: Vec<usize> = aliases
                .iter()
                .enumerate()
                .filter(|(_, (_, s))| matches!(s, Shape::Grouped { .. }))
                .map(|(i, _)| i)
                .collect();

            let mut choices: Vec<u8> = vec![];
            if !flat.is_empty() {
                choices.extend([0, 1, 3, 6]); // project, filter, group, distinct
                if flat.len() >= 2 {
                    choices.extend([2, 4, 5]); // join, cogroup, union
                }
            }
            if !grouped.is_empty() {
                choices.extend([7, 8]); // aggregate, flatten
            }
            let pick = |rng: &mut ChaCha8Rng, pool: &[usize]| pool[rng.gen_range(0..pool.len())];
            let (op, shape) = match choices[rng.gen_range(0..choices.len())] {
                0 => {
                    let s = pick(rng, &flat);
                    let (src, Shape::Flat { names }) = &aliases[s] else { unreachable!() };
                    let mut fields: Vec<usize> = (0..names.len()).collect();
                    while fields.len() > 1 && rng.gen_bool(0.4) {
                        fields.remove(rng.gen_range(0..fields.len()));
                    }
                    let mut out_names = Vec::new();
                    let items = fields
                        .iter()
                        .map(|i| {
                            let rename = format!("f{fresh}");
                            fresh += 1;
                            out_names.push(rename.clone());
                            ProjItem::Field(NamedField {
                                field: FieldRef::Position(*i),
                                rename: Some(rename),
                            })
                        })
                        .collect();
                    (
                        OpExpr::ForeachProject {
                            src: src.clone(),
                            items,
                            bag_mode: rng.gen_bool(0.3),
                        },
                        Shape::Flat { names: out_names },
                    )
                }
                1 => {
                    let s = pick(rng, &flat);
                    let (src, Shape::Flat { names }) = &aliases[s] else { unreachable!() };
                    let ops = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge];
                    let cond = Condition {
                        clauses: vec![Comparison {
                            left: Operand::Field(FieldRef::Position(
                                rng.gen_range(0..names.len()),
                            )),
                            op: ops[rng.gen_range(0..ops.len())],
                            right: Operand::Literal(AtomValue::Int(rng.gen_range(0..4))),
                        }],
                    };
                    (
                        OpExpr::Filter { src: src.clone(), cond },
                        Shape::Flat { names: names.clone() },
                    )
                }
                2 => {
                    let li = pick(rng, &flat);
                    let mut ri = pick(rng, &flat);
                    while ri == li {
                        ri = pick(rng, &flat);
                    }
                    let (l, Shape::Flat { names: ln }) = &aliases[li] else { unreachable!() };
                    let (r, Shape::Flat { names: rn }) = &aliases[ri] else { unreachable!() };
                    let lk = rng.gen_range(0..ln.len());
                    let rk = rng.gen_range(0..rn.len());
                    let names = join_names(l, ln, lk, r, rn, rk);
                    let unique =
                        names.iter().collect::<std::collections::BTreeSet<_>>().len()
                            == names.len();
                    if unique {
                        (
                            OpExpr::Join {
                                left: l.clone(),
                                left_key: FieldRef::Position(lk),
                                right: r.clone(),
                                right_key: FieldRef::Position(rk),
                            },
                            Shape::Flat { names },
                        )
                    } else {
                        // re-joining a relation whose names already carry
                        // the qualifier would collide; fall back
                        (
                            OpExpr::Distinct { src: l.clone() },
                            Shape::Flat { names: ln.clone() },
                        )
                    }
                }
                3 => {
                    let s = pick(rng, &flat);
                    let (src, Shape::Flat { names }) = &aliases[s] else { unreachable!() };
                    let key = rng.gen_range(0..names.len());
                    (
                        OpExpr::Group {
                            src: src.clone(),
                            key: GroupKey::Field(FieldRef::Position(key)),
                        },
                        Shape::Grouped { bags: vec![(names.clone(), true)] },
                    )
                }
                4 => {
                    let count = if flat.len() >= 3 && rng.gen_bool(0.5) { 3 } else { 2 };
                    let mut chosen = Vec::new();
                    let mut pool = flat.clone();
                    for _ in 0..count {
                        let at = rng.gen_range(0..pool.len());
                        chosen.push(pool.remove(at));
                    }
                    let mut sources = Vec::new();
                    let mut bags = Vec::new();
                    for c in &chosen {
                        let (name, Shape::Flat { names }) = &aliases[*c] else { unreachable!() };
                        sources
                            .push((name.clone(), FieldRef::Position(rng.gen_range(0..names.len()))));
                        bags.push((names.clone(), false));
                    }
                    (OpExpr::Cogroup { sources }, Shape::Grouped { bags })
                }
                5 => {
                    // union needs identical schemas; same alias twice is the
                    // guaranteed match, a distinct compatible alias is used
                    // when available
                    let li = pick(rng, &flat);
                    let (l, Shape::Flat { names: ln }) = &aliases[li] else { unreachable!() };
                    let compatible: Vec<usize> = flat
                        .iter()
                        .copied()
                        .filter(|i| {
                            let (_, Shape::Flat { names }) = &aliases[*i] else { unreachable!() };
                            names == ln
                        })
                        .collect();
                    let ri = pick(rng, &compatible);
                    let (r, _) = &aliases[ri];
                    (
                        OpExpr::Union { left: l.clone(), right: r.clone() },
                        Shape::Flat { names: ln.clone() },
                    )
                }
                6 => {
                    let s = pick(rng, &flat);
                    let (src, Shape::Flat { names }) = &aliases[s] else { unreachable!() };
                    (
                        OpExpr::Distinct { src: src.clone() },
                        Shape::Flat { names: names.clone() },
                    )
                }
                7 => {
                    let s = pick(rng, &grouped);
                    let (src, Shape::Grouped { bags }) = &aliases[s] else { unreachable!() };
                    let bag_pos = rng.gen_range(0..bags.len());
                    let (inner, never_empty) = &bags[bag_pos];
                    let op = if *never_empty {
                        [AggOp::Count, AggOp::Sum, AggOp::Min, AggOp::Max]
                            [rng.gen_range(0..4)]
                    } else {
                        [AggOp::Count, AggOp::Sum][rng.gen_range(0..2)]
                    };
                    let inner_attr = (op != AggOp::Count)
                        .then(|| inner[rng.gen_range(0..inner.len())].clone());
                    let key_name = format!("g{fresh}");
                    let val_name = format!("v{fresh}");
                    fresh += 1;
                    (
                        OpExpr::ForeachAggregate {
                            src: src.clone(),
                            keys: vec![NamedField {
                                field: FieldRef::Position(0),
                                rename: Some(key_name.clone()),
                            }],
                            agg: AggSpec {
                                op,
                                bag_field: FieldRef::Position(1 + bag_pos),
                                inner: inner_attr,
                                rename: val_name.clone(),
                            },
                        },
                        // terminal: aggregate values never feed later ops
                        Shape::Flat { names: vec![key_name, val_name] },
                    )
                }
                8 => {
                    let s = pick(rng, &grouped);
                    let (src, Shape::Grouped { bags }) = &aliases[s] else { unreachable!() };
                    let bag_pos = rng.gen_range(0..bags.len());
                    let key_name = format!("g{fresh}");
                    fresh += 1;
                    let mut names = vec![key_name.clone()];
                    names.extend(bags[bag_pos].0.iter().cloned());
                    (
                        OpExpr::ForeachProject {
                            src: src.clone(),
                            items: vec![
                                ProjItem::Field(NamedField {
                                    field: FieldRef::Position(0),
                                    rename: Some(key_name),
                                }),
                                ProjItem::Flatten {
                                    field: FieldRef::Position(1 + bag_pos),
                                },
                            ],
                            bag_mode: false,
                        },
                        Shape::Flat { names },
                    )
                }
                _ => unreachable!(),
            };
            let terminal = matches!(&st_kind(&op), 7);
            statements.push(Statement { alias: alias.clone(), op });
            shapes.push((alias.clone(), shape.clone()));
            // aggregate outputs are terminal; they never re-enter the pools
            if !terminal {
                aliases.push((alias, shape));
            }
        }
        GenProgram { bases, prog: PigProgram { statements }, shapes }
    }

    fn st_kind(op: &OpExpr) -> u8 {
        match op {
            OpExpr::ForeachAggregate { .. } => 7,
            _ => 0,
        }
    }

    fn join_names(
        l_alias: &str,
        ln: &[String],
        lk: usize,
        r_alias: &str,
        rn: &[String],
        rk: usize,
    ) -> Vec<String> {
        let qualified = |side: &str, n: &str| format!("{side}::{n}");
        let mut raw: Vec<String> = Vec::new();
        for (i, n) in ln.iter().enumerate() {
            raw.push(if i == lk { qualified(l_alias, n) } else { n.clone() });
        }
        for (i, n) in rn.iter().enumerate() {
            raw.push(if i == rk { qualified(r_alias, n) } else { n.clone() });
        }
        let mut names = Vec::new();
        for (pos, n) in raw.iter().enumerate() {
            if raw.iter().filter(|x| *x == n).count() > 1 {
                let (side, orig) = if pos < ln.len() {
                    (l_alias, &ln[pos])
                } else {
                    (r_alias, &rn[pos - ln.len()])
                };
                names.push(qualified(side, orig));
            } else {
                names.push(n.clone());
            }
        }
        names
    }
}

pub mod wfcheck {
    //! Deletion-vs-reexecution harness: random black-box-free workflows
    //! whose surviving outputs after deletion propagation must equal the
    //! outputs of re-executing with the deleted base tuples removed.

    use std::collections::{BTreeMap, BTreeSet};

    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    use lipstick::evalengine::{AnnValue, AnnotatedTuple, BbRegistry};
    use lipstick::pigparse::{FieldRef, NamedField, OpExpr, ProjItem, Statement};
    use lipstick::provgraph::{AggOp, Label, NodeId, ProvGraph};
    use lipstick::provquery::{delete_propagate, DeletionResult};
    use lipstick::relmodel::{canonicalize, AtomValue, Bag, Instance, Tuple, Value};
    use lipstick::workflow::{Edge, ModuleSpec, Workflow, WorkflowDef, WorkflowInput};
    use lipstick::workflowgen::{run_generated, GeneratedWorkflow, RunLabel};

    use super::progen::{self, Shape};

    /// Builds a two-node workflow (source -> compute) whose compute module
    /// runs a random program over its input `R0` and state `R1`/`R2`.
    pub fn random_workflow(rng: &mut ChaCha8Rng) -> GeneratedWorkflow {
        let gen = progen::random_program(rng, 3);
        let input_rel = gen.bases[0].clone();
        let state_rels: Vec<_> = gen.bases[1..].to_vec();

        // state may accumulate the input when schemas line up
        let mut q_state_stmts: Vec<Statement> = Vec::new();
        if !state_rels.is_empty() && rng.gen_bool(0.5) {
            q_state_stmts.push(Statement {
                alias: state_rels[0].0.clone(),
                op: OpExpr::Union {
                    left: state_rels[0].0.clone(),
                    right: input_rel.0.clone(),
                },
            });
        }

        // flatten a grouped final shape, then pin the output alias
        let mut statements = gen.prog.statements.clone();
        let (mut last_alias, mut last_shape) =
            gen.shapes.last().cloned().expect("at least one statement");
        if let Shape::Grouped { bags } = &last_shape {
            let names: Vec<String> = std::iter::once("gk".to_string())
                .chain(bags[0].0.iter().cloned())
                .collect();
            statements.push(Statement {
                alias: "Flat".into(),
                op: OpExpr::ForeachProject {
                    src: last_alias.clone(),
                    items: vec![
                        ProjItem::Field(NamedField {
                            field: FieldRef::Position(0),
                            rename: Some("gk".into()),
                        }),
                        ProjItem::Flatten { field: FieldRef::Position(1) },
                    ],
                    bag_mode: false,
                },
            });
            last_alias = "Flat".into();
            last_shape = Shape::Flat { names };
        }
        let Shape::Flat { names } = &last_shape else { unreachable!() };
        let out_items: Vec<ProjItem> = (0..names.len())
            .map(|i| {
                ProjItem::Field(NamedField {
                    field: FieldRef::Position(i),
                    rename: Some(format!("o{i}")),
                })
            })
            .collect();
        statements.push(Statement {
            alias: "Out".into(),
            op: OpExpr::ForeachProject {
                src: last_alias,
                items: out_items,
                bag_mode: true,
            },
        });
        let out_schema = lipstick::relmodel::Schema::new(
            "Out",
            (0..names.len())
                .map(|i| {
                    (
                        format!("o{i}"),
                        lipstick::relmodel::AttrType::Atom(lipstick::relmodel::AtomKind::Int),
                    )
                })
                .collect(),
        );

        let mut modules = BTreeMap::new();
        modules.insert(
            "M_src".to_string(),
            ModuleSpec {
                name: "M_src".into(),
                s_in: vec![],
                s_state: vec![],
                s_out: vec![input_rel.1.clone()],
                q_state: Default::default(),
                q_out: Default::default(),
            },
        );
        modules.insert(
            "M_comp".to_string(),
            ModuleSpec {
                name: "M_comp".into(),
                s_in: vec![input_rel.1.clone()],
                s_state: state_rels.iter().map(|(_, s, _)| s.clone()).collect(),
                s_out: vec![out_schema],
                q_state: lipstick::pigparse::PigProgram { statements: q_state_stmts },
                q_out: lipstick::pigparse::PigProgram { statements },
            },
        );
        let workflow = Workflow {
            nodes: [
                ("src".to_string(), "M_src".to_string()),
                ("comp".to_string(), "M_comp".to_string()),
            ]
            .into_iter()
            .collect(),
            edges: vec![Edge {
                src: "src".into(),
                dst: "comp".into(),
                relations: vec![input_rel.0.clone()],
            }],
            inputs: ["src".to_string()].into_iter().collect(),
            outputs: ["comp".to_string()].into_iter().collect(),
        };

        let mut comp_state = Instance::new();
        for (name, _, bag) in &state_rels {
            comp_state.insert(name.clone(), bag.clone());
        }
        let mut initial_state = BTreeMap::new();
        initial_state.insert("M_comp".to_string(), comp_state);

        let num_exec = rng.gen_range(1..=3);
        let mut inputs = Vec::new();
        for e in 0..num_exec {
            let bag = if e == 0 {
                input_rel.2.clone()
            } else {
                Bag::new(
                    (0..rng.gen_range(0..=6))
                        .map(|_| {
                            Tuple(vec![
                                lipstick::relmodel::int(rng.gen_range(0..4)),
                                lipstick::relmodel::int(rng.gen_range(0..4)),
                            ])
                        })
                        .collect(),
                )
            };
            let mut input = WorkflowInput::new();
            input.insert(("src".to_string(), input_rel.0.clone()), bag);
            inputs.push(input);
        }

        GeneratedWorkflow {
            def: WorkflowDef { modules, workflow },
            initial_state,
            inputs,
            bbs: BbRegistry::new(),
            stop_on_output: false,
            label: RunLabel::default(),
        }
    }

    /// Where a deletable token came from.
    #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
    pub enum TokenSource {
        Input { exec: usize, rel: String, ordinal: usize },
        State { module: String, rel: String, ordinal: usize },
    }

    /// Maps every base token to the workflow-input or initial-state tuple
    /// it annotates, via the graph's instance bindings.
    pub fn token_sources(graph: &ProvGraph) -> BTreeMap<NodeId, TokenSource> {
        let mut out = BTreeMap::new();
        for (instance, ordinal, node) in graph.bindings() {
            let parts: Vec<&str> = instance.split(':').collect();
            match parts.as_slice() {
                ["wfin", _node, idx, rel] => {
                    let exec = idx.parse::<usize>().expect("index") - 1;
                    out.insert(
                        node,
                        TokenSource::Input {
                            exec,
                            rel: rel.to_string(),
                            ordinal: ordinal as usize,
                        },
                    );
                }
                ["stateinit", module, rel] => {
                    out.insert(
                        node,
                        TokenSource::State {
                            module: module.to_string(),
                            rel: rel.to_string(),
                            ordinal: ordinal as usize,
                        },
                    );
                }
                _ => {}
            }
        }
        out
    }

    fn remove_ordinals(bag: &Bag, drop: &BTreeSet<usize>) -> Bag {
        Bag::new(
            canonicalize(bag)
                .into_iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, t)| t)
                .collect(),
        )
    }

    /// The value a surviving tuple exposes after deletion: recomputed
    /// aggregate fields substituted, deleted nested members dropped.
    /// Returns None when the tuple itself is deleted.
    pub fn surviving_tuple(
        graph: &ProvGraph,
        t: &AnnotatedTuple,
        result: &DeletionResult,
    ) -> Option<Tuple> {
        if result.deleted.contains(&t.pnode) {
            return None;
        }
        let mut values = Vec::with_capacity(t.values.len());
        for (i, v) in t.values.iter().enumerate() {
            match v {
                AnnValue::Atom(a) => {
                    let value = match t.value_bindings.get(&i) {
                        Some(agg) => match result.recomputed.get(agg) {
                            Some(new) => new.clone(),
                            None if result.deleted.contains(agg) => {
                                // every operand died but the tuple lives
                                // (an empty cogroup bag): identity value
                                match graph.node(*agg).map(|n| &n.label) {
                                    Some(Label::Agg(AggOp::Count)) => AtomValue::Int(0),
                                    Some(Label::Agg(AggOp::Sum)) => match a {
                                        AtomValue::Float(_) => AtomValue::Float(0.0),
                                        _ => AtomValue::Int(0),
                                    },
                                    _ => a.clone(),
                                }
                            }
                            None => a.clone(),
                        },
                        None => a.clone(),
                    };
                    values.push(Value::Atom(value));
                }
                AnnValue::Bag(members) => {
                    let kept: Vec<Tuple> = members
                        .iter()
                        .filter_map(|m| surviving_tuple(graph, m, result))
                        .collect();
                    values.push(Value::Bag(Bag::new(kept)));
                }
            }
        }
        Some(Tuple(values))
    }

    /// Runs one randomized case: propagate a random token deletion and
    /// compare surviving outputs against a re-execution without the
    /// deleted base tuples. Returns an error message on mismatch.
    pub fn check_deletion_matches_reexecution(rng: &mut ChaCha8Rng) -> Result<(), String> {
        let gw = random_workflow(rng);
        let outcome = run_generated(&gw, true).map_err(|e| e.to_string())?;
        let graph = outcome.graph.as_ref().expect("tracked run");

        let sources = token_sources(graph);
        let seeds: BTreeSet<NodeId> = sources
            .keys()
            .copied()
            .filter(|_| rng.gen_bool(0.35))
            .collect();
        let result = delete_propagate(graph, &seeds).map_err(|e| e.to_string())?;

        // survivors of the tracked run
        let mut survived: Vec<(usize, String, Vec<Tuple>)> = Vec::new();
        for rec in &outcome.log.executions {
            for ((_, rel), relation) in &rec.outputs {
                let mut rows: Vec<Tuple> = relation
                    .tuples
                    .iter()
                    .filter_map(|t| surviving_tuple(graph, t, &result))
                    .collect();
                rows.sort();
                survived.push((rec.index, rel.clone(), rows));
            }
        }

        // re-execution with the deleted tuples removed
        let mut rerun = GeneratedWorkflow {
            def: gw.def.clone(),
            initial_state: gw.initial_state.clone(),
            inputs: gw.inputs.clone(),
            bbs: BbRegistry::new(),
            stop_on_output: false,
            label: RunLabel::default(),
        };
        let mut drop_inputs: BTreeMap<(usize, String), BTreeSet<usize>> = BTreeMap::new();
        let mut drop_state: BTreeMap<(String, String), BTreeSet<usize>> = BTreeMap::new();
        for seed in &seeds {
            match &sources[seed] {
                TokenSource::Input { exec, rel, ordinal } => {
                    drop_inputs.entry((*exec, rel.clone())).or_default().insert(*ordinal);
                }
                TokenSource::State { module, rel, ordinal } => {
                    drop_state
                        .entry((module.clone(), rel.clone()))
                        .or_default()
                        .insert(*ordinal);
                }
            }
        }
        for ((exec, rel), drop) in &drop_inputs {
            let bag = rerun.inputs[*exec]
                .get_mut(&("src".to_string(), rel.clone()))
                .expect("input exists");
            *bag = remove_ordinals(bag, drop);
        }
        for ((module, rel), drop) in &drop_state {
            let bag = rerun
                .initial_state
                .get_mut(module)
                .and_then(|i| i.get_mut(rel))
                .expect("state exists");
            *bag = remove_ordinals(bag, drop);
        }
        let reexec = run_generated(&rerun, false).map_err(|e| e.to_string())?;

        let mut expected: Vec<(usize, String, Vec<Tuple>)> = Vec::new();
        for rec in &reexec.log.executions {
            for ((_, rel), relation) in &rec.outputs {
                let mut rows = canonicalize(&relation.to_bag());
                rows.sort();
                expected.push((rec.index, rel.clone(), rows));
            }
        }

        if survived != expected {
            return Err(format!(
                "deletion/reexecution mismatch\nseeds: {seeds:?}\nsurvived: {survived:?}\n\
                 expected: {expected:?}\nprogram:\n{}",
                lipstick::pigparse::pretty_print(&gw.def.modules["M_comp"].q_out)
            ));
        }
        Ok(())
    }
}

use std::collections::BTreeMap;

use lipstick::evalengine::{AnnotatedRelation, BbRegistry, Evaluator, Tracker};
use lipstick::provgraph::{eval_polynomial, Polynomial, PolynomialOptions, ProvGraph};
use lipstick::provgraph::NodeClass;
use lipstick::relmodel::Tuple;

/// Runs a generated program through the engine statement by statement,
/// returning the graph and the final environment.
pub fn run_engine(
    gen: &progen::GenProgram,
) -> (ProvGraph, BTreeMap<String, AnnotatedRelation>, Vec<u64>) {
    let mut graph = ProvGraph::new();
    let mut env: BTreeMap<String, AnnotatedRelation> = BTreeMap::new();
    let mut node_counts = Vec::new();
    {
        let mut ev = Evaluator::new(Tracker::on(&mut graph));
        for (name, schema, bag) in &gen.bases {
            let rel = ev
                .annotate_base(bag, schema, NodeClass::Input, &format!("{name}/"), &format!("base:{name}"))
                .expect("base annotates");
            env.insert(name.clone(), rel);
        }
        for st in &gen.prog.statements {
            let single = lipstick::pigparse::PigProgram { statements: vec![st.clone()] };
            ev.eval_program(&mut env, &single, &BbRegistry::new(), "t")
                .expect("generated statement evaluates");
            node_counts.push(ev.tracker.node_count() as u64);
        }
    }
    (graph, env, node_counts)
}

/// Runs a generated program through the engine with a fresh graph, and
/// through the polynomial oracle over the same token ids. Returns, per
/// assigned alias, the two canonical (value, polynomial) multisets.
pub fn engine_vs_oracle(
    gen: &progen::GenProgram,
) -> Vec<(String, Vec<(Tuple, Polynomial)>, Vec<(Tuple, Polynomial)>)> {
    let mut graph = ProvGraph::new();
    let mut engine_env: BTreeMap<String, AnnotatedRelation> = BTreeMap::new();
    let mut oracle_env: BTreeMap<String, oracle::ORel> = BTreeMap::new();
    {
        let mut ev = Evaluator::new(Tracker::on(&mut graph));
        for (name, schema, bag) in &gen.bases {
            let rel = ev
                .annotate_base(bag, schema, NodeClass::Input, &format!("{name}/"), &format!("base:{name}"))
                .expect("base annotates");
            let otuples = rel
                .tuples
                .iter()
                .map(|t| oracle::OTuple {
                    values: t
                        .values
                        .iter()
                        .map(|v| match v {
                            lipstick::evalengine::AnnValue::Atom(a) => {
                                oracle::OValue::Atom(a.clone())
                            }
                            lipstick::evalengine::AnnValue::Bag(_) => {
                                panic!("flat bases only")
                            }
                        })
                        .collect(),
                    poly: Polynomial::var(t.pnode),
                })
                .collect();
            oracle_env.insert(
                name.clone(),
                oracle::ORel {
                    names: schema.attributes.iter().map(|(n, _)| n.clone()).collect(),
                    tuples: otuples,
                },
            );
            engine_env.insert(name.clone(), rel);
        }
        ev.eval_program(&mut engine_env, &gen.prog, &BbRegistry::new(), "t")
            .expect("generated program evaluates");
    }
    oracle::eval_program(&mut oracle_env, &gen.prog);

    let mut out = Vec::new();
    for st in &gen.prog.statements {
        let engine_rel = &engine_env[&st.alias];
        let mut engine_pairs: Vec<(Tuple, Polynomial)> = engine_rel
            .tuples
            .iter()
            .map(|t| {
                let poly = eval_polynomial(
                    &graph,
                    t.pnode,
                    &BTreeMap::new(),
                    PolynomialOptions::default(),
                )
                .expect("p-node evaluates");
                (t.strip(), poly)
            })
            .collect();
        engine_pairs.sort();
        let oracle_pairs = oracle_env[&st.alias].value_poly_pairs();
        out.push((st.alias.clone(), engine_pairs, oracle_pairs));
    }
    out
}
