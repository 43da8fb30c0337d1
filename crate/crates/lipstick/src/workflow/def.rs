//! The workflow definition file format.
//!
//! ```text
//! MODULE M_dealer1
//!   INPUT Requests(UserId:text, BidId:text, Model:text)
//!   STATE Cars(CarId:text, Model:text)
//!   OUTPUT Bids(Model:text, Price:float)
//!   QSTATE {
//!     ReqModel = FOREACH Requests GENERATE Model;
//!   }
//!   QOUT {
//!     Bids = FOREACH InventoryBids GENERATE Model, Amount AS Price;
//!   }
//!
//! WORKFLOW
//!   NODE d1 : M_dealer1
//!   EDGE req -> d1 : Requests
//!   IN req
//!   OUT agg
//! ```
//!
//! Attribute types are `int`, `float`, `text`, `bool`, or `bag(...)` for a
//! nested relation. Lines starting with `#` are comments.

use thiserror::Error;

use super::{Edge, ModuleSpec, WorkflowDef};
use crate::pigparse::{parse as parse_pig, pretty_print, PigParseError};
use crate::relmodel::{AtomKind, AttrType, Schema};

#[derive(Debug, Error, PartialEq)]
pub enum WfDefError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: in embedded program: {source}")]
    Program {
        line: usize,
        #[source]
        source: PigParseError,
    },
}

fn err(line: usize, message: impl Into<String>) -> WfDefError {
    WfDefError::Malformed { line, message: message.into() }
}

pub fn parse_workflow_def(input: &str) -> Result<WorkflowDef, WfDefError> {
    let mut def = WorkflowDef::default();
    let lines: Vec<&str> = input.lines().collect();
    let mut i = 0usize;
    let mut in_workflow = false;
    let mut current: Option<ModuleSpec> = None;

    while i < lines.len() {
        let lineno = i + 1;
        let line = lines[i].trim();
        i += 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = match line.split_once(char::is_whitespace) {
            Some((h, r)) => (h, r.trim()),
            None => (line, ""),
        };
        match head {
            "MODULE" => {
                if let Some(m) = current.take() {
                    def.modules.insert(m.name.clone(), m);
                }
                if rest.is_empty() {
                    return Err(err(lineno, "MODULE needs a name"));
                }
                in_workflow = false;
                current = Some(ModuleSpec {
                    name: rest.to_string(),
                    s_in: vec![],
                    s_state: vec![],
                    s_out: vec![],
                    q_state: Default::default(),
                    q_out: Default::default(),
                });
            }
            "INPUT" | "STATE" | "OUTPUT" => {
                let m = current
                    .as_mut()
                    .ok_or_else(|| err(lineno, format!("{head} outside a MODULE block")))?;
                let schema = parse_schema_decl(rest, lineno)?;
                match head {
                    "INPUT" => m.s_in.push(schema),
                    "STATE" => m.s_state.push(schema),
                    _ => m.s_out.push(schema),
                }
            }
            "QSTATE" | "QOUT" => {
                let (text, next_i) = collect_braced(&lines, i - 1, rest, lineno)?;
                i = next_i;
                let prog = parse_pig(&text)
                    .map_err(|source| WfDefError::Program { line: lineno, source })?;
                let m = current
                    .as_mut()
                    .ok_or_else(|| err(lineno, format!("{head} outside a MODULE block")))?;
                if head == "QSTATE" {
                    m.q_state = prog;
                } else {
                    m.q_out = prog;
                }
            }
            "WORKFLOW" => {
                if let Some(m) = current.take() {
                    def.modules.insert(m.name.clone(), m);
                }
                in_workflow = true;
            }
            "NODE" => {
                if !in_workflow {
                    return Err(err(lineno, "NODE outside the WORKFLOW block"));
                }
                let (node, module) = rest
                    .split_once(':')
                    .ok_or_else(|| err(lineno, "NODE needs `<name> : <module>`"))?;
                def.workflow
                    .nodes
                    .insert(node.trim().to_string(), module.trim().to_string());
            }
            "EDGE" => {
                if !in_workflow {
                    return Err(err(lineno, "EDGE outside the WORKFLOW block"));
                }
                let (ends, rels) = rest
                    .split_once(':')
                    .ok_or_else(|| err(lineno, "EDGE needs `<src> -> <dst> : <relations>`"))?;
                let (src, dst) = ends
                    .split_once("->")
                    .ok_or_else(|| err(lineno, "EDGE needs `<src> -> <dst>`"))?;
                let relations: Vec<String> = rels
                    .split(',')
                    .map(|r| r.trim().to_string())
                    .filter(|r| !r.is_empty())
                    .collect();
                if relations.is_empty() {
                    return Err(err(lineno, "EDGE needs at least one relation"));
                }
                def.workflow.edges.push(Edge {
                    src: src.trim().to_string(),
                    dst: dst.trim().to_string(),
                    relations,
                });
            }
            "IN" => {
                if !in_workflow {
                    return Err(err(lineno, "IN outside the WORKFLOW block"));
                }
                for n in rest.split_whitespace() {
                    def.workflow.inputs.insert(n.to_string());
                }
            }
            "OUT" => {
                if !in_workflow {
                    return Err(err(lineno, "OUT outside the WORKFLOW block"));
                }
                for n in rest.split_whitespace() {
                    def.workflow.outputs.insert(n.to_string());
                }
            }
            other => return Err(err(lineno, format!("unknown directive `{other}`"))),
        }
    }
    if let Some(m) = current.take() {
        def.modules.insert(m.name.clone(), m);
    }
    Ok(def)
}

/// Collects the text between `{` on the directive line and a line holding
/// the matching `}`. Returns (text, index of the line after the block).
fn collect_braced(
    lines: &[&str],
    start_idx: usize,
    rest: &str,
    lineno: usize,
) -> Result<(String, usize), WfDefError> {
    let after_brace = rest
        .strip_prefix('{')
        .ok_or_else(|| err(lineno, "expected `{` after QSTATE/QOUT"))?;
    if let Some(inline) = after_brace.trim_end().strip_suffix('}') {
        return Ok((inline.to_string(), start_idx + 1));
    }
    let mut text = String::new();
    text.push_str(after_brace);
    text.push('\n');
    let mut i = start_idx + 1;
    while i < lines.len() {
        let line = lines[i];
        if line.trim() == "}" {
            return Ok((text, i + 1));
        }
        text.push_str(line);
        text.push('\n');
        i += 1;
    }
    Err(err(lineno, "unterminated `{` block"))
}

fn parse_schema_decl(decl: &str, lineno: usize) -> Result<Schema, WfDefError> {
    let open = decl
        .find('(')
        .ok_or_else(|| err(lineno, "schema needs `Name(attr:type, ...)`"))?;
    let name = decl[..open].trim();
    if name.is_empty() {
        return Err(err(lineno, "schema needs a relation name"));
    }
    let body = decl[open..].trim();
    let (schema, rest) = parse_schema_body(name, body, lineno)?;
    if !rest.trim().is_empty() {
        return Err(err(lineno, format!("trailing input after schema: `{rest}`")));
    }
    Ok(schema)
}

/// Parses `(attr:type, ...)`; returns the schema and the remaining input.
fn parse_schema_body<'a>(
    name: &str,
    input: &'a str,
    lineno: usize,
) -> Result<(Schema, &'a str), WfDefError> {
    let mut rest = input
        .strip_prefix('(')
        .ok_or_else(|| err(lineno, "expected `(`"))?
        .trim_start();
    let mut attrs = Vec::new();
    loop {
        if let Some(r) = rest.strip_prefix(')') {
            return Ok((Schema::new(name, attrs), r));
        }
        let colon = rest
            .find(':')
            .ok_or_else(|| err(lineno, "attribute needs `name:type`"))?;
        let attr_name = rest[..colon].trim().to_string();
        rest = rest[colon + 1..].trim_start();
        let ty = if let Some(r) = rest.strip_prefix("bag") {
            let (inner, r2) = parse_schema_body(&attr_name, r.trim_start(), lineno)?;
            rest = r2;
            AttrType::Nested(inner)
        } else {
            let end = rest
                .find([',', ')'])
                .ok_or_else(|| err(lineno, "unterminated attribute list"))?;
            let ty_name = rest[..end].trim();
            let kind = match ty_name {
                "int" => AtomKind::Int,
                "float" => AtomKind::Float,
                "text" => AtomKind::Text,
                "bool" => AtomKind::Bool,
                other => return Err(err(lineno, format!("unknown type `{other}`"))),
            };
            rest = &rest[end..];
            AttrType::Atom(kind)
        };
        attrs.push((attr_name, ty));
        rest = rest.trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        }
    }
}

fn render_type(ty: &AttrType) -> String {
    match ty {
        AttrType::Atom(AtomKind::Int) => "int".into(),
        AttrType::Atom(AtomKind::Float) => "float".into(),
        AttrType::Atom(AtomKind::Text) => "text".into(),
        AttrType::Atom(AtomKind::Bool) => "bool".into(),
        AttrType::Nested(inner) => format!("bag{}", render_attrs(inner)),
    }
}

fn render_attrs(schema: &Schema) -> String {
    let attrs: Vec<String> = schema
        .attributes
        .iter()
        .map(|(n, t)| format!("{n}:{}", render_type(t)))
        .collect();
    format!("({})", attrs.join(", "))
}

/// Renders a definition that [`parse_workflow_def`] parses back to the same
/// value.
pub fn render_workflow_def(def: &WorkflowDef) -> String {
    let mut out = String::new();
    for m in def.modules.values() {
        out.push_str(&format!("MODULE {}\n", m.name));
        for s in &m.s_in {
            out.push_str(&format!("  INPUT {}{}\n", s.name, render_attrs(s)));
        }
        for s in &m.s_state {
            out.push_str(&format!("  STATE {}{}\n", s.name, render_attrs(s)));
        }
        for s in &m.s_out {
            out.push_str(&format!("  OUTPUT {}{}\n", s.name, render_attrs(s)));
        }
        for (kw, prog) in [("QSTATE", &m.q_state), ("QOUT", &m.q_out)] {
            if prog.is_empty() {
                continue;
            }
            out.push_str(&format!("  {kw} {{\n"));
            for line in pretty_print(prog).lines() {
                out.push_str("    ");
                out.push_str(line);
                out.push('\n');
            }
            out.push_str("  }\n");
        }
        out.push('\n');
    }
    out.push_str("WORKFLOW\n");
    for (node, module) in &def.workflow.nodes {
        out.push_str(&format!("  NODE {node} : {module}\n"));
    }
    for e in &def.workflow.edges {
        out.push_str(&format!("  EDGE {} -> {} : {}\n", e.src, e.dst, e.relations.join(", ")));
    }
    if !def.workflow.inputs.is_empty() {
        let ins: Vec<&str> = def.workflow.inputs.iter().map(String::as_str).collect();
        out.push_str(&format!("  IN {}\n", ins.join(" ")));
    }
    if !def.workflow.outputs.is_empty() {
        let outs: Vec<&str> = def.workflow.outputs.iter().map(String::as_str).collect();
        out.push_str(&format!("  OUT {}\n", outs.join(" ")));
    }
    out
}
