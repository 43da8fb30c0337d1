//! Provenance polynomials over tokens: the semantics that grounds the graph.
//!
//! A polynomial is a normalized multiset of monomials with natural
//! coefficients. Atoms are tokens, symbolic `δ(p)` applications (only law:
//! `δ(0) = 0`), and opaque black-box atoms over argument polynomials (zero
//! if any argument is zero). Normalization sorts atoms and monomials and
//! merges equal monomials, so structural equality is semantic equality.

use std::collections::BTreeMap;
use std::fmt;

use super::{GraphError, Label, NodeId, NodeKind, ProvGraph};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum PolyAtom {
    Token(NodeId),
    Delta(Polynomial),
    Bb(String, Vec<Polynomial>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Monomial {
    pub coeff: u64,
    /// Sorted multiset of atoms.
    pub atoms: Vec<PolyAtom>,
}

/// Normalized form: monomials sorted by atom vector, unique, non-zero.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Polynomial {
    monos: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial { monos: Vec::new() }
    }

    pub fn one() -> Self {
        Polynomial { monos: vec![Monomial { coeff: 1, atoms: Vec::new() }] }
    }

    pub fn var(token: NodeId) -> Self {
        Polynomial { monos: vec![Monomial { coeff: 1, atoms: vec![PolyAtom::Token(token)] }] }
    }

    pub fn from_monomials(monos: Vec<Monomial>) -> Self {
        let mut p = Polynomial { monos };
        p.normalize();
        p
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monos
    }

    pub fn is_zero(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.monos.len() == 1 && self.monos[0].coeff == 1 && self.monos[0].atoms.is_empty()
    }

    fn normalize(&mut self) {
        for m in &mut self.monos {
            m.atoms.sort();
        }
        self.monos.sort_by(|a, b| a.atoms.cmp(&b.atoms));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.monos.len());
        for m in self.monos.drain(..) {
            if m.coeff == 0 {
                continue;
            }
            match merged.last_mut() {
                Some(last) if last.atoms == m.atoms => last.coeff += m.coeff,
                _ => merged.push(m),
            }
        }
        self.monos = merged;
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut monos = self.monos.clone();
        monos.extend(other.monos.iter().cloned());
        Polynomial::from_monomials(monos)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut monos = Vec::with_capacity(self.monos.len() * other.monos.len());
        for a in &self.monos {
            for b in &other.monos {
                let mut atoms = a.atoms.clone();
                atoms.extend(b.atoms.iter().cloned());
                monos.push(Monomial { coeff: a.coeff * b.coeff, atoms });
            }
        }
        Polynomial::from_monomials(monos)
    }

    /// Symbolic duplicate elimination; `δ(0) = 0`, otherwise kept as an atom.
    pub fn delta(inner: &Polynomial) -> Polynomial {
        if inner.is_zero() {
            return Polynomial::zero();
        }
        Polynomial {
            monos: vec![Monomial { coeff: 1, atoms: vec![PolyAtom::Delta(inner.clone())] }],
        }
    }

    /// Opaque black-box atom over argument polynomials; zero annihilates.
    pub fn bb_atom(name: &str, mut args: Vec<Polynomial>) -> Polynomial {
        if args.iter().any(Polynomial::is_zero) {
            return Polynomial::zero();
        }
        args.sort();
        Polynomial {
            monos: vec![Monomial {
                coeff: 1,
                atoms: vec![PolyAtom::Bb(name.to_string(), args)],
            }],
        }
    }

    pub fn sum<'a>(terms: impl IntoIterator<Item = &'a Polynomial>) -> Polynomial {
        let mut monos = Vec::new();
        for t in terms {
            monos.extend(t.monos.iter().cloned());
        }
        Polynomial::from_monomials(monos)
    }

    pub fn product<'a>(factors: impl IntoIterator<Item = &'a Polynomial>) -> Polynomial {
        let mut acc = Polynomial::one();
        for f in factors {
            acc = acc.mul(f);
            if acc.is_zero() {
                break;
            }
        }
        acc
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        for (i, m) in self.monos.iter().enumerate() {
            if i > 0 {
                f.write_str(" + ")?;
            }
            if m.coeff != 1 || m.atoms.is_empty() {
                write!(f, "{}", m.coeff)?;
                if !m.atoms.is_empty() {
                    f.write_str("*")?;
                }
            }
            for (j, a) in m.atoms.iter().enumerate() {
                if j > 0 {
                    f.write_str("*")?;
                }
                match a {
                    PolyAtom::Token(id) => write!(f, "t{id}")?,
                    PolyAtom::Delta(p) => write!(f, "d({p})")?,
                    PolyAtom::Bb(name, args) => {
                        write!(f, "{name}[")?;
                        for (k, arg) in args.iter().enumerate() {
                            if k > 0 {
                                f.write_str("; ")?;
                            }
                            write!(f, "{arg}")?;
                        }
                        f.write_str("]")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PolynomialOptions {
    /// Treat module-invocation nodes as tokens instead of the multiplicative
    /// identity.
    pub invocation_as_token: bool,
}

/// Evaluates the polynomial of a provenance node. Token assignments map
/// token node ids to replacement polynomials; unassigned tokens stay
/// symbolic.
pub fn eval_polynomial(
    graph: &ProvGraph,
    node: NodeId,
    assignment: &BTreeMap<NodeId, Polynomial>,
    opts: PolynomialOptions,
) -> Result<Polynomial, GraphError> {
    let mut memo: BTreeMap<NodeId, Polynomial> = BTreeMap::new();
    eval_rec(graph, node, assignment, opts, &mut memo)
}

fn eval_rec(
    graph: &ProvGraph,
    id: NodeId,
    assignment: &BTreeMap<NodeId, Polynomial>,
    opts: PolynomialOptions,
    memo: &mut BTreeMap<NodeId, Polynomial>,
) -> Result<Polynomial, GraphError> {
    if let Some(p) = memo.get(&id) {
        return Ok(p.clone());
    }
    let node = graph.node(id).ok_or(GraphError::UnknownNode(id))?;
    if node.kind == NodeKind::V {
        return Err(GraphError::NodeIsValue(id));
    }
    let preds = graph.preds(id);
    let result = match &node.label {
        Label::Token(_) => assignment.get(&id).cloned().unwrap_or_else(|| Polynomial::var(id)),
        Label::Plus => {
            let mut acc = Polynomial::zero();
            for p in preds {
                acc = acc.add(&eval_rec(graph, *p, assignment, opts, memo)?);
            }
            acc
        }
        Label::Times => {
            let mut acc = Polynomial::one();
            for p in preds {
                acc = acc.mul(&eval_rec(graph, *p, assignment, opts, memo)?);
            }
            acc
        }
        Label::Delta => {
            let mut acc = Polynomial::zero();
            for p in preds {
                acc = acc.add(&eval_rec(graph, *p, assignment, opts, memo)?);
            }
            Polynomial::delta(&acc)
        }
        Label::Invocation(_) => {
            if opts.invocation_as_token {
                Polynomial::var(id)
            } else {
                Polynomial::one()
            }
        }
        Label::Bb(name) => {
            let mut args = Vec::with_capacity(preds.len());
            for p in preds {
                args.push(eval_rec(graph, *p, assignment, opts, memo)?);
            }
            Polynomial::bb_atom(name, args)
        }
        Label::Meta(_) => return Err(GraphError::NoPolynomialSemantics(id)),
        Label::Tensor | Label::Agg(_) | Label::Const(_) => {
            return Err(GraphError::NodeIsValue(id));
        }
    };
    memo.insert(id, result.clone());
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provgraph::{NodeClass, NodeSpec};

    fn graph_with_tokens(n: usize) -> (ProvGraph, Vec<NodeId>) {
        let mut g = ProvGraph::new();
        let toks = (0..n)
            .map(|i| g.fresh_token(NodeClass::Input, format!("t{i}")).unwrap())
            .collect();
        (g, toks)
    }

    #[test]
    fn token_evaluates_to_itself() {
        let (g, toks) = graph_with_tokens(1);
        let p = eval_polynomial(&g, toks[0], &BTreeMap::new(), Default::default()).unwrap();
        assert_eq!(p, Polynomial::var(toks[0]));
    }

    #[test]
    fn times_over_tokens_is_a_product() {
        let (mut g, toks) = graph_with_tokens(2);
        let j = g.extend(NodeSpec::plain(Label::Times), &toks).unwrap();
        let p = eval_polynomial(&g, j, &BTreeMap::new(), Default::default()).unwrap();
        assert_eq!(p, Polynomial::var(toks[0]).mul(&Polynomial::var(toks[1])));
        assert_eq!(p.to_string(), "t0*t1");
    }

    #[test]
    fn plus_distributes_like_brute_force_expansion() {
        // x1*x2 + x1*x3, cross-checked against an independent expansion of
        // monomial multisets.
        let (mut g, toks) = graph_with_tokens(3);
        let a = g.extend(NodeSpec::plain(Label::Times), &[toks[0], toks[1]]).unwrap();
        let b = g.extend(NodeSpec::plain(Label::Times), &[toks[0], toks[2]]).unwrap();
        let s = g.extend(NodeSpec::plain(Label::Plus), &[a, b]).unwrap();
        let p = eval_polynomial(&g, s, &BTreeMap::new(), Default::default()).unwrap();

        let expected = Polynomial::from_monomials(vec![
            Monomial { coeff: 1, atoms: vec![PolyAtom::Token(toks[0]), PolyAtom::Token(toks[1])] },
            Monomial { coeff: 1, atoms: vec![PolyAtom::Token(toks[0]), PolyAtom::Token(toks[2])] },
        ]);
        assert_eq!(p, expected);
    }

    #[test]
    fn delta_of_zero_vanishes() {
        let (mut g, toks) = graph_with_tokens(2);
        let plus = g.extend(NodeSpec::plain(Label::Plus), &toks).unwrap();
        let delta = g.extend(NodeSpec::plain(Label::Delta), &[plus]).unwrap();
        let mut zeroed = BTreeMap::new();
        zeroed.insert(toks[0], Polynomial::zero());
        zeroed.insert(toks[1], Polynomial::zero());
        let p = eval_polynomial(&g, delta, &zeroed, Default::default()).unwrap();
        assert!(p.is_zero());

        let partial: BTreeMap<_, _> = [(toks[0], Polynomial::zero())].into_iter().collect();
        let q = eval_polynomial(&g, delta, &partial, Default::default()).unwrap();
        assert_eq!(q, Polynomial::delta(&Polynomial::var(toks[1])));
    }

    #[test]
    fn bb_atom_is_zero_if_any_argument_is_zero() {
        let (mut g, toks) = graph_with_tokens(2);
        let bb = g
            .extend(NodeSpec::plain(Label::Bb("CalcBid".into())), &toks)
            .unwrap();
        let p = eval_polynomial(&g, bb, &BTreeMap::new(), Default::default()).unwrap();
        assert!(!p.is_zero());
        let zeroed: BTreeMap<_, _> = [(toks[1], Polynomial::zero())].into_iter().collect();
        let q = eval_polynomial(&g, bb, &zeroed, Default::default()).unwrap();
        assert!(q.is_zero());
    }

    #[test]
    fn invocation_defaults_to_identity_and_can_be_tracked() {
        let (mut g, toks) = graph_with_tokens(1);
        let inv = g
            .extend(
                NodeSpec::classed(
                    NodeClass::Module,
                    Label::Invocation(super::super::InvocationKey {
                        module: "M".into(),
                        node: "n".into(),
                        index: 1,
                    }),
                ),
                &[],
            )
            .unwrap();
        let wrapped = g
            .extend(NodeSpec::classed(NodeClass::Input, Label::Times), &[toks[0], inv])
            .unwrap();
        let p = eval_polynomial(&g, wrapped, &BTreeMap::new(), Default::default()).unwrap();
        assert_eq!(p, Polynomial::var(toks[0]));

        let opts = PolynomialOptions { invocation_as_token: true };
        let q = eval_polynomial(&g, wrapped, &BTreeMap::new(), opts).unwrap();
        assert_eq!(q, Polynomial::var(toks[0]).mul(&Polynomial::var(inv)));
    }

    #[test]
    fn value_nodes_have_no_polynomial() {
        let mut g = ProvGraph::new();
        let c = g.const_node(crate::relmodel::AtomValue::Int(1));
        let err = eval_polynomial(&g, c, &BTreeMap::new(), Default::default()).unwrap_err();
        assert_eq!(err, GraphError::NodeIsValue(c));
    }

    #[test]
    fn self_join_squares_the_token() {
        let (mut g, toks) = graph_with_tokens(1);
        let sq = g.extend(NodeSpec::plain(Label::Times), &[toks[0], toks[0]]).unwrap();
        let p = eval_polynomial(&g, sq, &BTreeMap::new(), Default::default()).unwrap();
        assert_eq!(p, Polynomial::var(toks[0]).mul(&Polynomial::var(toks[0])));
        assert_ne!(p, Polynomial::var(toks[0]));
    }

    // Randomized semiring-law checks on normalized polynomials.
    mod laws {
        use super::*;
        use proptest::prelude::*;

        fn arb_poly() -> impl Strategy<Value = Polynomial> {
            prop::collection::vec(
                (1u64..4, prop::collection::vec(0u32..5, 0..4)),
                0..4,
            )
            .prop_map(|monos| {
                Polynomial::from_monomials(
                    monos
                        .into_iter()
                        .map(|(coeff, toks)| Monomial {
                            coeff,
                            atoms: toks.into_iter().map(PolyAtom::Token).collect(),
                        })
                        .collect(),
                )
            })
        }

        proptest! {
            #[test]
            fn add_commutes(a in arb_poly(), b in arb_poly()) {
                prop_assert_eq!(a.add(&b), b.add(&a));
            }

            #[test]
            fn mul_commutes(a in arb_poly(), b in arb_poly()) {
                prop_assert_eq!(a.mul(&b), b.mul(&a));
            }

            #[test]
            fn add_associates(a in arb_poly(), b in arb_poly(), c in arb_poly()) {
                prop_assert_eq!(a.add(&b).add(&c), a.add(&b.add(&c)));
            }

            #[test]
            fn mul_associates(a in arb_poly(), b in arb_poly(), c in arb_poly()) {
                prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
            }

            #[test]
            fn mul_distributes_over_add(a in arb_poly(), b in arb_poly(), c in arb_poly()) {
                prop_assert_eq!(a.mul(&b.add(&c)), a.mul(&b).add(&a.mul(&c)));
            }

            #[test]
            fn zero_annihilates_and_one_is_identity(a in arb_poly()) {
                prop_assert!(a.mul(&Polynomial::zero()).is_zero());
                prop_assert_eq!(a.mul(&Polynomial::one()), a.clone());
                prop_assert_eq!(a.add(&Polynomial::zero()), a);
            }
        }
    }
}
