//! Text serialization of provenance graphs.
//!
//! Canonical layout, UTF-8, LF line endings:
//!
//! ```text
//! PG <version> <nodes> <edges> <bindings>[ VIEW]
//! N <id> <P|V> <class> <label-tag> [label-args...]
//! E <src> <dst>
//! B <relation-instance-id> <tuple-ordinal> <node-id>
//! ```
//!
//! Nodes ascend by id, edges are sorted by (src, dst) with parallel edges
//! repeated, bindings are sorted. String arguments are percent-encoded so a
//! line always splits on single spaces; the empty string encodes as `%`.
//! Serializing a graph twice, or serializing after a round-trip, yields
//! byte-identical output.

use std::fmt::Write as _;

use thiserror::Error;

use super::{AggOp, InvocationKey, Label, NodeClass, NodeKind, ProvGraph, ProvNode};
use crate::relmodel::AtomValue;

const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: edge references unknown node {node}")]
    DanglingEdge { line: usize, node: u32 },
    #[error("graph contains a cycle involving node {0}")]
    Cycle(u32),
}

fn encode(s: &str) -> String {
    if s.is_empty() {
        return "%".to_string();
    }
    let mut out = String::with_capacity(s.len());
    for &b in s.as_bytes() {
        if b == b'%' || b <= 0x20 || b == 0x7f {
            let _ = write!(out, "%{b:02X}");
        } else {
            out.push(b as char);
        }
    }
    out
}

fn decode(s: &str) -> Result<String, String> {
    if s == "%" {
        return Ok(String::new());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = s
                .get(i + 1..i + 3)
                .ok_or_else(|| format!("truncated percent escape in `{s}`"))?;
            let v = u8::from_str_radix(hex, 16)
                .map_err(|_| format!("bad percent escape `%{hex}`"))?;
            out.push(v);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).map_err(|_| format!("invalid UTF-8 after decoding `{s}`"))
}

fn render_label(label: &Label) -> String {
    match label {
        Label::Token(name) => format!("Token {}", encode(name)),
        Label::Plus => "Plus".to_string(),
        Label::Times => "Times".to_string(),
        Label::Delta => "Delta".to_string(),
        Label::Tensor => "Tensor".to_string(),
        Label::Agg(op) => format!("Agg {}", op.name()),
        Label::Bb(name) => format!("BB {}", encode(name)),
        Label::Const(v) => match v {
            AtomValue::Int(i) => format!("Const I {i}"),
            AtomValue::Float(f) => format!("Const F {f}"),
            AtomValue::Text(s) => format!("Const T {}", encode(s)),
            AtomValue::Bool(b) => format!("Const B {b}"),
        },
        Label::Invocation(k) => format!(
            "Inv {} {} {}",
            encode(&k.module),
            encode(&k.node),
            k.index
        ),
        Label::Meta(k) => format!(
            "Meta {} {} {}",
            encode(&k.module),
            encode(&k.node),
            k.index
        ),
    }
}

impl ProvGraph {
    /// Serializes the graph in the canonical byte-exact layout.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut edges: Vec<(u32, u32)> = self.edges().collect();
        edges.sort_unstable();
        let _ = write!(
            out,
            "PG {VERSION} {} {} {}",
            self.node_count(),
            edges.len(),
            self.binding_count()
        );
        if self.is_view() {
            out.push_str(" VIEW");
        }
        out.push('\n');
        for node in self.nodes() {
            let kind = match node.kind {
                NodeKind::P => "P",
                NodeKind::V => "V",
            };
            let _ = writeln!(
                out,
                "N {} {} {} {}",
                node.id,
                kind,
                node.class.tag(),
                render_label(&node.label)
            );
        }
        for (src, dst) in edges {
            let _ = writeln!(out, "E {src} {dst}");
        }
        for (instance, ordinal, node) in self.bindings() {
            let _ = writeln!(out, "B {} {ordinal} {node}", encode(instance));
        }
        out
    }

    /// Parses a serialized graph; the inverse of [`ProvGraph::serialize`].
    pub fn deserialize(input: &str) -> Result<ProvGraph, GraphParseError> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or(GraphParseError::Malformed {
            line: 1,
            message: "empty input".into(),
        })?;
        let mut head = header.split(' ');
        let magic = head.next();
        if magic != Some("PG") {
            return Err(GraphParseError::Malformed {
                line: 1,
                message: "missing PG header".into(),
            });
        }
        let mut nums = Vec::new();
        let mut is_view = false;
        for part in head {
            if part == "VIEW" {
                is_view = true;
            } else {
                nums.push(part.parse::<u64>().map_err(|_| GraphParseError::Malformed {
                    line: 1,
                    message: format!("bad header field `{part}`"),
                })?);
            }
        }
        if nums.len() != 4 {
            return Err(GraphParseError::Malformed {
                line: 1,
                message: "header needs version, node, edge and binding counts".into(),
            });
        }
        if nums[0] != VERSION as u64 {
            return Err(GraphParseError::Malformed {
                line: 1,
                message: format!("unsupported version {}", nums[0]),
            });
        }

        let mut graph = ProvGraph::new();
        if is_view {
            graph.mark_view();
        }
        let mut edge_lines: Vec<(usize, u32, u32)> = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let fail = |message: String| GraphParseError::Malformed { line: lineno, message };
            match fields[0] {
                "N" => {
                    let node = parse_node_line(&fields, lineno)?;
                    if graph.contains(node.id) {
                        return Err(fail(format!("duplicate node id {}", node.id)));
                    }
                    graph.insert_raw_node(node);
                }
                "E" => {
                    if fields.len() != 3 {
                        return Err(fail("edge line needs `E <src> <dst>`".into()));
                    }
                    let src = parse_u32(fields[1], lineno)?;
                    let dst = parse_u32(fields[2], lineno)?;
                    edge_lines.push((lineno, src, dst));
                }
                "B" => {
                    if fields.len() != 4 {
                        return Err(fail(
                            "binding line needs `B <instance> <ordinal> <node>`".into(),
                        ));
                    }
                    let instance = decode(fields[1]).map_err(|m| GraphParseError::Malformed {
                        line: lineno,
                        message: m,
                    })?;
                    let ordinal = fields[2].parse::<u64>().map_err(|_| {
                        GraphParseError::Malformed {
                            line: lineno,
                            message: format!("bad ordinal `{}`", fields[2]),
                        }
                    })?;
                    let node = parse_u32(fields[3], lineno)?;
                    if !graph.contains(node) {
                        return Err(GraphParseError::DanglingEdge { line: lineno, node });
                    }
                    graph.bind(&instance, ordinal, node).map_err(|e| {
                        GraphParseError::Malformed { line: lineno, message: e.to_string() }
                    })?;
                }
                other => {
                    return Err(fail(format!("unknown record `{other}`")));
                }
            }
        }
        for (lineno, src, dst) in edge_lines {
            if !graph.contains(src) {
                return Err(GraphParseError::DanglingEdge { line: lineno, node: src });
            }
            if !graph.contains(dst) {
                return Err(GraphParseError::DanglingEdge { line: lineno, node: dst });
            }
            graph
                .insert_raw_edge(src, dst)
                .map_err(|_| GraphParseError::DanglingEdge { line: lineno, node: dst })?;
        }
        check_acyclic(&graph)?;
        Ok(graph)
    }
}

fn parse_u32(s: &str, line: usize) -> Result<u32, GraphParseError> {
    s.parse::<u32>().map_err(|_| GraphParseError::Malformed {
        line,
        message: format!("bad node id `{s}`"),
    })
}

fn parse_node_line(fields: &[&str], line: usize) -> Result<ProvNode, GraphParseError> {
    let fail = |message: String| GraphParseError::Malformed { line, message };
    if fields.len() < 5 {
        return Err(fail("node line needs `N <id> <P|V> <class> <label>`".into()));
    }
    let id = parse_u32(fields[1], line)?;
    let kind = match fields[2] {
        "P" => NodeKind::P,
        "V" => NodeKind::V,
        other => return Err(fail(format!("bad node kind `{other}`"))),
    };
    let class = NodeClass::from_tag(fields[3])
        .ok_or_else(|| fail(format!("bad node class `{}`", fields[3])))?;
    let dec = |s: &str| decode(s).map_err(|m| GraphParseError::Malformed { line, message: m });
    let args = &fields[5..];
    let label = match fields[4] {
        "Token" => {
            if args.len() != 1 {
                return Err(fail("Token takes one argument".into()));
            }
            Label::Token(dec(args[0])?)
        }
        "Plus" => Label::Plus,
        "Times" => Label::Times,
        "Delta" => Label::Delta,
        "Tensor" => Label::Tensor,
        "Agg" => {
            if args.len() != 1 {
                return Err(fail("Agg takes one argument".into()));
            }
            Label::Agg(
                AggOp::from_name(args[0])
                    .ok_or_else(|| fail(format!("unknown aggregate `{}`", args[0])))?,
            )
        }
        "BB" => {
            if args.len() != 1 {
                return Err(fail("BB takes one argument".into()));
            }
            Label::Bb(dec(args[0])?)
        }
        "Const" => {
            if args.len() != 2 {
                return Err(fail("Const takes a kind and a value".into()));
            }
            let value = match args[0] {
                "I" => AtomValue::Int(args[1].parse().map_err(|_| {
                    GraphParseError::Malformed {
                        line,
                        message: format!("bad int constant `{}`", args[1]),
                    }
                })?),
                "F" => AtomValue::Float(args[1].parse().map_err(|_| {
                    GraphParseError::Malformed {
                        line,
                        message: format!("bad float constant `{}`", args[1]),
                    }
                })?),
                "T" => AtomValue::Text(dec(args[1])?),
                "B" => AtomValue::Bool(args[1] == "true"),
                other => return Err(fail(format!("bad constant kind `{other}`"))),
            };
            Label::Const(value)
        }
        "Inv" | "Meta" => {
            if args.len() != 3 {
                return Err(fail("invocation labels take module, node, index".into()));
            }
            let key = InvocationKey {
                module: dec(args[0])?,
                node: dec(args[1])?,
                index: args[2].parse().map_err(|_| GraphParseError::Malformed {
                    line,
                    message: format!("bad invocation index `{}`", args[2]),
                })?,
            };
            if fields[4] == "Inv" {
                Label::Invocation(key)
            } else {
                Label::Meta(key)
            }
        }
        other => return Err(fail(format!("unknown label `{other}`"))),
    };
    Ok(ProvNode { id, kind, class, label })
}

fn check_acyclic(graph: &ProvGraph) -> Result<(), GraphParseError> {
    // Kahn's algorithm over the parsed graph; parallel edges count.
    let mut indeg: std::collections::BTreeMap<u32, usize> =
        graph.node_ids().map(|id| (id, graph.preds(id).len())).collect();
    let mut ready: Vec<u32> =
        indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    let mut seen = 0usize;
    while let Some(id) = ready.pop() {
        seen += 1;
        for s in graph.succs(id) {
            let d = indeg.get_mut(s).expect("successor exists");
            *d -= 1;
            if *d == 0 {
                ready.push(*s);
            }
        }
    }
    if seen != graph.node_count() {
        let culprit = indeg
            .iter()
            .find(|(_, d)| **d > 0)
            .map(|(id, _)| *id)
            .unwrap_or_default();
        return Err(GraphParseError::Cycle(culprit));
    }
    Ok(())
}
