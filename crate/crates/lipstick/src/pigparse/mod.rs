//! Parser, resolver, and type checker for the Pig Latin fragment.
//!
//! The fragment covers FOREACH (projection, aggregation, black-box calls,
//! FLATTEN), FILTER, JOIN, GROUP/COGROUP, UNION, DISTINCT and ORDER, with
//! `;`-terminated single-assignment statements and `--` line comments.
//! Keywords are case-insensitive; aliases and field names are not.

mod lex;
mod parse;
pub(crate) mod typecheck;

pub use parse::{parse, pretty_print, PigParseError};
pub use typecheck::{resolve_and_typecheck, TypeError};

use crate::provgraph::AggOp;
use crate::relmodel::AtomValue;

/// A validated list of statements; each assigns one alias.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PigProgram {
    pub statements: Vec<Statement>,
}

impl PigProgram {
    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    /// Aliases assigned by this program, in statement order.
    pub fn assigned_aliases(&self) -> Vec<&str> {
        self.statements.iter().map(|s| s.alias.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub alias: String,
    pub op: OpExpr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpExpr {
    /// `FOREACH src GENERATE [BAG] items` without aggregates or BB calls.
    /// By default output tuples with equal values are merged; `BAG` keeps
    /// one output tuple per source tuple instead.
    ForeachProject { src: String, items: Vec<ProjItem>, bag_mode: bool },
    /// `FOREACH src GENERATE key..., OP(path) AS name`.
    ForeachAggregate { src: String, keys: Vec<NamedField>, agg: AggSpec },
    /// `FOREACH src GENERATE [FLATTEN(] name(args) [)]`.
    ForeachBb { src: String, bb: String, args: Vec<FieldRef>, flatten: bool },
    Filter { src: String, cond: Condition },
    Join { left: String, left_key: FieldRef, right: String, right_key: FieldRef },
    Group { src: String, key: GroupKey },
    Cogroup { sources: Vec<(String, FieldRef)> },
    Union { left: String, right: String },
    Distinct { src: String },
    Order { src: String, key: FieldRef },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjItem {
    Field(NamedField),
    /// Splices one nesting level of a bag-valued field into the output.
    Flatten { field: FieldRef },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedField {
    pub field: FieldRef,
    pub rename: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggSpec {
    pub op: AggOp,
    /// The nested bag being aggregated.
    pub bag_field: FieldRef,
    /// Attribute inside the bag; required for SUM/MIN/MAX, absent for COUNT.
    pub inner: Option<String>,
    pub rename: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupKey {
    Field(FieldRef),
    /// `GROUP src ALL`: a single group keyed by the text value `all`.
    All,
}

/// Field reference by name (possibly qualified, `Cars::Model`) or by
/// position (`$0`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum FieldRef {
    Name(String),
    Position(usize),
}

impl std::fmt::Display for FieldRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldRef::Name(n) => f.write_str(n),
            FieldRef::Position(k) => write!(f, "${k}"),
        }
    }
}

/// Conjunction of comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub clauses: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub left: Operand,
    pub op: CmpOp,
    pub right: Operand,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Field(FieldRef),
    Literal(AtomValue),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn evaluate(&self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}
