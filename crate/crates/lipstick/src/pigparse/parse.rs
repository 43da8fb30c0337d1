//! Recursive-descent parser and pretty-printer.

use std::fmt::Write as _;

use thiserror::Error;

use super::lex::{tokenize, Spanned, Tok};
use super::*;

#[derive(Debug, Error, PartialEq)]
pub enum PigParseError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("alias {alias} is assigned more than once")]
    DuplicateAssignment { alias: String },
}

const KEYWORDS: &[&str] = &[
    "FOREACH", "GENERATE", "FILTER", "BY", "JOIN", "GROUP", "COGROUP", "UNION", "DISTINCT",
    "ORDER", "FLATTEN", "AS", "AND", "ALL", "BAG", "SUM", "COUNT", "MIN", "MAX", "TRUE", "FALSE",
];

fn keyword_of(name: &str) -> Option<&'static str> {
    let upper = name.to_ascii_uppercase();
    KEYWORDS.iter().copied().find(|k| *k == upper)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(name)) if keyword_of(name) == Some(kw))
    }

    fn location(&self) -> (usize, usize) {
        self.toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1))
    }

    fn error(&self, message: impl Into<String>) -> PigParseError {
        let (line, col) = self.location();
        PigParseError::Syntax { line, col, message: message.into() }
    }

    fn bump(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        tok
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), PigParseError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), PigParseError> {
        if self.at_keyword(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected keyword {kw}")))
        }
    }

    /// An alias: a non-keyword identifier.
    fn alias(&mut self) -> Result<String, PigParseError> {
        match self.peek() {
            Some(Tok::Ident(name)) if keyword_of(name).is_none() => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            Some(Tok::Ident(name)) => Err(self.error(format!("`{name}` is a reserved keyword"))),
            _ => Err(self.error("expected an identifier")),
        }
    }

    /// A field reference. `group` is both a keyword elsewhere in Pig and the
    /// name GROUP gives its key column, so GROUP in field position means the
    /// field named `group`.
    fn field_ref(&mut self) -> Result<FieldRef, PigParseError> {
        match self.peek() {
            Some(Tok::Dollar(k)) => {
                let k = *k;
                self.pos += 1;
                Ok(FieldRef::Position(k))
            }
            Some(Tok::Ident(name)) => {
                let field = if keyword_of(name) == Some("GROUP") {
                    "group".to_string()
                } else if keyword_of(name).is_some() {
                    return Err(self.error(format!("`{name}` is a reserved keyword")));
                } else {
                    name.clone()
                };
                self.pos += 1;
                Ok(FieldRef::Name(field))
            }
            _ => Err(self.error("expected a field reference")),
        }
    }

    fn statement(&mut self) -> Result<Statement, PigParseError> {
        let alias = self.alias()?;
        self.expect(&Tok::Assign, "`=`")?;
        let op = self.op_expr()?;
        self.expect(&Tok::Semi, "`;`")?;
        Ok(Statement { alias, op })
    }

    fn op_expr(&mut self) -> Result<OpExpr, PigParseError> {
        let kw = match self.peek() {
            Some(Tok::Ident(name)) => keyword_of(name),
            _ => None,
        };
        match kw {
            Some("FOREACH") => self.foreach(),
            Some("FILTER") => {
                self.pos += 1;
                let src = self.alias()?;
                self.expect_keyword("BY")?;
                let cond = self.condition()?;
                Ok(OpExpr::Filter { src, cond })
            }
            Some("JOIN") => {
                self.pos += 1;
                let left = self.alias()?;
                self.expect_keyword("BY")?;
                let left_key = self.field_ref()?;
                self.expect(&Tok::Comma, "`,`")?;
                let right = self.alias()?;
                self.expect_keyword("BY")?;
                let right_key = self.field_ref()?;
                Ok(OpExpr::Join { left, left_key, right, right_key })
            }
            Some("GROUP") => {
                self.pos += 1;
                let src = self.alias()?;
                if self.at_keyword("ALL") {
                    self.pos += 1;
                    Ok(OpExpr::Group { src, key: GroupKey::All })
                } else {
                    self.expect_keyword("BY")?;
                    let key = self.field_ref()?;
                    Ok(OpExpr::Group { src, key: GroupKey::Field(key) })
                }
            }
            Some("COGROUP") => {
                self.pos += 1;
                let mut sources = Vec::new();
                loop {
                    let src = self.alias()?;
                    self.expect_keyword("BY")?;
                    let key = self.field_ref()?;
                    sources.push((src, key));
                    if self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                if sources.len() < 2 {
                    return Err(self.error("COGROUP needs at least two sources"));
                }
                Ok(OpExpr::Cogroup { sources })
            }
            Some("UNION") => {
                self.pos += 1;
                let left = self.alias()?;
                self.expect(&Tok::Comma, "`,`")?;
                let right = self.alias()?;
                Ok(OpExpr::Union { left, right })
            }
            Some("DISTINCT") => {
                self.pos += 1;
                let src = self.alias()?;
                Ok(OpExpr::Distinct { src })
            }
            Some("ORDER") => {
                self.pos += 1;
                let src = self.alias()?;
                self.expect_keyword("BY")?;
                let key = self.field_ref()?;
                Ok(OpExpr::Order { src, key })
            }
            Some(other) => Err(self.error(format!("`{other}` cannot start an expression"))),
            None => Err(self.error("expected an operator keyword")),
        }
    }

    fn foreach(&mut self) -> Result<OpExpr, PigParseError> {
        self.expect_keyword("FOREACH")?;
        let src = self.alias()?;
        self.expect_keyword("GENERATE")?;
        let bag_mode = if self.at_keyword("BAG") {
            self.pos += 1;
            true
        } else {
            false
        };

        let mut items: Vec<ProjItem> = Vec::new();
        let mut agg: Option<AggSpec> = None;
        let mut bb: Option<(String, Vec<FieldRef>, bool)> = None;
        loop {
            if self.at_keyword("FLATTEN") {
                self.pos += 1;
                self.expect(&Tok::LParen, "`(`")?;
                if self.is_call_start() {
                    let (name, args) = self.bb_call()?;
                    bb = Some((name, args, true));
                } else {
                    let field = self.field_ref()?;
                    items.push(ProjItem::Flatten { field });
                }
                self.expect(&Tok::RParen, "`)`")?;
            } else if let Some(op) = self.agg_op_ahead() {
                self.pos += 1;
                self.expect(&Tok::LParen, "`(`")?;
                let bag_field = self.field_ref()?;
                let inner = if self.peek() == Some(&Tok::Dot) {
                    self.pos += 1;
                    match self.field_ref()? {
                        FieldRef::Name(n) => Some(n),
                        FieldRef::Position(_) => {
                            return Err(self.error("aggregate paths use attribute names"))
                        }
                    }
                } else {
                    None
                };
                self.expect(&Tok::RParen, "`)`")?;
                self.expect_keyword("AS")?;
                let rename = self.alias()?;
                if agg.is_some() {
                    return Err(self.error("only one aggregate per FOREACH"));
                }
                agg = Some(AggSpec { op, bag_field, inner, rename });
            } else if self.is_call_start() {
                let (name, args) = self.bb_call()?;
                bb = Some((name, args, false));
            } else {
                let field = self.field_ref()?;
                let rename = if self.at_keyword("AS") {
                    self.pos += 1;
                    Some(self.alias()?)
                } else {
                    None
                };
                items.push(ProjItem::Field(NamedField { field, rename }));
            }
            if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
            } else {
                break;
            }
        }

        if let Some((bb, args, flatten)) = bb {
            if !items.is_empty() || agg.is_some() {
                return Err(self.error("a black-box call must be the only GENERATE item"));
            }
            if bag_mode {
                return Err(self.error("BAG does not apply to black-box calls"));
            }
            return Ok(OpExpr::ForeachBb { src, bb, args, flatten });
        }
        if let Some(agg) = agg {
            let mut keys = Vec::new();
            for item in items {
                match item {
                    ProjItem::Field(f) => keys.push(f),
                    ProjItem::Flatten { .. } => {
                        return Err(self.error("FLATTEN cannot be combined with an aggregate"))
                    }
                }
            }
            if bag_mode {
                return Err(self.error("BAG does not apply to aggregation"));
            }
            return Ok(OpExpr::ForeachAggregate { src, keys, agg });
        }
        if items.is_empty() {
            return Err(self.error("GENERATE needs at least one item"));
        }
        if items.iter().filter(|i| matches!(i, ProjItem::Flatten { .. })).count() > 1 {
            return Err(self.error("at most one FLATTEN per FOREACH"));
        }
        Ok(OpExpr::ForeachProject { src, items, bag_mode })
    }

    fn agg_op_ahead(&self) -> Option<crate::provgraph::AggOp> {
        if let Some(Tok::Ident(name)) = self.peek() {
            if self.toks.get(self.pos + 1).map(|s| &s.tok) == Some(&Tok::LParen) {
                return match keyword_of(name) {
                    Some("SUM") => Some(crate::provgraph::AggOp::Sum),
                    Some("COUNT") => Some(crate::provgraph::AggOp::Count),
                    Some("MIN") => Some(crate::provgraph::AggOp::Min),
                    Some("MAX") => Some(crate::provgraph::AggOp::Max),
                    _ => None,
                };
            }
        }
        None
    }

    /// True at `Ident (` where Ident is not a keyword: a black-box call.
    fn is_call_start(&self) -> bool {
        if let Some(Tok::Ident(name)) = self.peek() {
            keyword_of(name).is_none()
                && self.toks.get(self.pos + 1).map(|s| &s.tok) == Some(&Tok::LParen)
        } else {
            false
        }
    }

    fn bb_call(&mut self) -> Result<(String, Vec<FieldRef>), PigParseError> {
        let name = self.alias()?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                args.push(self.field_ref()?);
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok((name, args))
    }

    fn condition(&mut self) -> Result<Condition, PigParseError> {
        let mut clauses = vec![self.comparison()?];
        while self.at_keyword("AND") {
            self.pos += 1;
            clauses.push(self.comparison()?);
        }
        Ok(Condition { clauses })
    }

    fn comparison(&mut self) -> Result<Comparison, PigParseError> {
        let left = self.operand()?;
        let op = match self.bump() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.error("expected a comparison operator"));
            }
        };
        let right = self.operand()?;
        Ok(Comparison { left, op, right })
    }

    fn operand(&mut self) -> Result<Operand, PigParseError> {
        use crate::relmodel::AtomValue;
        match self.peek() {
            Some(Tok::Int(i)) => {
                let i = *i;
                self.pos += 1;
                Ok(Operand::Literal(AtomValue::Int(i)))
            }
            Some(Tok::Float(f)) => {
                let f = *f;
                self.pos += 1;
                Ok(Operand::Literal(AtomValue::Float(f)))
            }
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(Operand::Literal(AtomValue::Text(s)))
            }
            Some(Tok::Ident(name)) if keyword_of(name) == Some("TRUE") => {
                self.pos += 1;
                Ok(Operand::Literal(AtomValue::Bool(true)))
            }
            Some(Tok::Ident(name)) if keyword_of(name) == Some("FALSE") => {
                self.pos += 1;
                Ok(Operand::Literal(AtomValue::Bool(false)))
            }
            _ => Ok(Operand::Field(self.field_ref()?)),
        }
    }
}

/// Parses program source into an AST, preserving statement order.
pub fn parse(src: &str) -> Result<PigProgram, PigParseError> {
    let toks = tokenize(src)?;
    let mut parser = Parser { toks, pos: 0 };
    let mut statements = Vec::new();
    while parser.peek().is_some() {
        statements.push(parser.statement()?);
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in &statements {
        if !seen.insert(s.alias.clone()) {
            return Err(PigParseError::DuplicateAssignment { alias: s.alias.clone() });
        }
    }
    Ok(PigProgram { statements })
}

/// Renders a program in canonical form; `parse(pretty_print(p)) == p`.
pub fn pretty_print(prog: &PigProgram) -> String {
    let mut out = String::new();
    for s in &prog.statements {
        let _ = write!(out, "{} = ", s.alias);
        match &s.op {
            OpExpr::ForeachProject { src, items, bag_mode } => {
                let _ = write!(out, "FOREACH {src} GENERATE ");
                if *bag_mode {
                    out.push_str("BAG ");
                }
                let rendered: Vec<String> = items
                    .iter()
                    .map(|i| match i {
                        ProjItem::Field(f) => render_named_field(f),
                        ProjItem::Flatten { field } => format!("FLATTEN({field})"),
                    })
                    .collect();
                out.push_str(&rendered.join(", "));
            }
            OpExpr::ForeachAggregate { src, keys, agg } => {
                let _ = write!(out, "FOREACH {src} GENERATE ");
                let mut rendered: Vec<String> = keys.iter().map(render_named_field).collect();
                let path = match &agg.inner {
                    Some(inner) => format!("{}.{}", agg.bag_field, inner),
                    None => agg.bag_field.to_string(),
                };
                rendered.push(format!("{}({path}) AS {}", agg.op.name(), agg.rename));
                out.push_str(&rendered.join(", "));
            }
            OpExpr::ForeachBb { src, bb, args, flatten } => {
                let _ = write!(out, "FOREACH {src} GENERATE ");
                let arglist =
                    args.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ");
                if *flatten {
                    let _ = write!(out, "FLATTEN({bb}({arglist}))");
                } else {
                    let _ = write!(out, "{bb}({arglist})");
                }
            }
            OpExpr::Filter { src, cond } => {
                let clauses: Vec<String> = cond
                    .clauses
                    .iter()
                    .map(|c| {
                        format!(
                            "{} {} {}",
                            render_operand(&c.left),
                            c.op.symbol(),
                            render_operand(&c.right)
                        )
                    })
                    .collect();
                let _ = write!(out, "FILTER {src} BY {}", clauses.join(" AND "));
            }
            OpExpr::Join { left, left_key, right, right_key } => {
                let _ = write!(out, "JOIN {left} BY {left_key}, {right} BY {right_key}");
            }
            OpExpr::Group { src, key } => match key {
                GroupKey::Field(f) => {
                    let _ = write!(out, "GROUP {src} BY {f}");
                }
                GroupKey::All => {
                    let _ = write!(out, "GROUP {src} ALL");
                }
            },
            OpExpr::Cogroup { sources } => {
                let rendered: Vec<String> =
                    sources.iter().map(|(s, k)| format!("{s} BY {k}")).collect();
                let _ = write!(out, "COGROUP {}", rendered.join(", "));
            }
            OpExpr::Union { left, right } => {
                let _ = write!(out, "UNION {left}, {right}");
            }
            OpExpr::Distinct { src } => {
                let _ = write!(out, "DISTINCT {src}");
            }
            OpExpr::Order { src, key } => {
                let _ = write!(out, "ORDER {src} BY {key}");
            }
        }
        out.push_str(";\n");
    }
    out
}

fn render_named_field(f: &NamedField) -> String {
    match &f.rename {
        Some(r) => format!("{} AS {r}", render_field(&f.field)),
        None => render_field(&f.field),
    }
}

fn render_field(f: &FieldRef) -> String {
    f.to_string()
}

fn render_operand(o: &Operand) -> String {
    use crate::relmodel::AtomValue;
    match o {
        Operand::Field(f) => render_field(f),
        Operand::Literal(AtomValue::Text(s)) => format!("'{s}'"),
        Operand::Literal(AtomValue::Int(i)) => i.to_string(),
        Operand::Literal(AtomValue::Float(f)) => {
            let s = f.to_string();
            // keep float literals lexically floats
            if s.contains('.') {
                s
            } else {
                format!("{s}.0")
            }
        }
        Operand::Literal(AtomValue::Bool(b)) => {
            if *b {
                "true".to_string()
            } else {
                "false".to_string()
            }
        }
    }
}
