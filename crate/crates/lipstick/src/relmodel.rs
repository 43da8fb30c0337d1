//! Nested-relational bag data model shared by all other modules.
//!
//! Relations are unordered bags of tuples; a tuple holds atoms or nested
//! bags, positionally matching a [`Schema`]. Bags are homogeneous. Equality
//! is exact (floats compare bitwise via their total order), and
//! [`canonicalize`] fixes a deterministic tuple order used everywhere a
//! stable iteration or golden comparison is needed.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Kind of an atomic value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomKind {
    Int,
    Float,
    Text,
    Bool,
}

impl fmt::Display for AtomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AtomKind::Int => "int",
            AtomKind::Float => "float",
            AtomKind::Text => "text",
            AtomKind::Bool => "bool",
        };
        f.write_str(s)
    }
}

/// An atomic value. Ordering is total within each kind; across kinds the
/// kind rank decides. Float ordering and equality follow `f64::total_cmp`,
/// so equality is exact and NaN-safe.
#[derive(Debug, Clone)]
pub enum AtomValue {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl AtomValue {
    pub fn kind(&self) -> AtomKind {
        match self {
            AtomValue::Int(_) => AtomKind::Int,
            AtomValue::Float(_) => AtomKind::Float,
            AtomValue::Text(_) => AtomKind::Text,
            AtomValue::Bool(_) => AtomKind::Bool,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            AtomValue::Int(_) => 0,
            AtomValue::Float(_) => 1,
            AtomValue::Text(_) => 2,
            AtomValue::Bool(_) => 3,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AtomValue::Int(i) => Some(*i as f64),
            AtomValue::Float(f) => Some(*f),
            _ => None,
        }
    }
}

impl PartialEq for AtomValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for AtomValue {}

impl PartialOrd for AtomValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AtomValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AtomValue::Int(a), AtomValue::Int(b)) => a.cmp(b),
            (AtomValue::Float(a), AtomValue::Float(b)) => a.total_cmp(b),
            (AtomValue::Text(a), AtomValue::Text(b)) => a.cmp(b),
            (AtomValue::Bool(a), AtomValue::Bool(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl fmt::Display for AtomValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomValue::Int(i) => write!(f, "{i}"),
            AtomValue::Float(x) => write!(f, "{x}"),
            AtomValue::Text(s) => f.write_str(s),
            AtomValue::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// Declared type of a schema attribute: an atom kind or a nested schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttrType {
    Atom(AtomKind),
    Nested(Schema),
}

impl AttrType {
    pub fn is_numeric(&self) -> bool {
        matches!(self, AttrType::Atom(AtomKind::Int) | AttrType::Atom(AtomKind::Float))
    }
}

/// A named, ordered list of attributes. Attribute names are unique within
/// one nesting level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub name: String,
    pub attributes: Vec<(String, AttrType)>,
}

impl Schema {
    pub fn new(name: impl Into<String>, attributes: Vec<(String, AttrType)>) -> Self {
        Schema { name: name.into(), attributes }
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|(n, _)| n == name)
    }

    pub fn attr_type(&self, name: &str) -> Option<&AttrType> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Checks that attribute names are unique at this level and recursively
    /// in nested schemas.
    pub fn check_well_formed(&self) -> Result<(), ValidationError> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, ty) in &self.attributes {
            if !seen.insert(name.clone()) {
                return Err(ValidationError::DuplicateAttribute {
                    schema: self.name.clone(),
                    attribute: name.clone(),
                });
            }
            if let AttrType::Nested(inner) = ty {
                inner.check_well_formed()?;
            }
        }
        Ok(())
    }
}

/// A tuple field: an atom or a nested bag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Atom(AtomValue),
    Bag(Bag),
}

impl Value {
    pub fn as_atom(&self) -> Option<&AtomValue> {
        match self {
            Value::Atom(a) => Some(a),
            Value::Bag(_) => None,
        }
    }

    pub fn as_bag(&self) -> Option<&Bag> {
        match self {
            Value::Bag(b) => Some(b),
            Value::Atom(_) => None,
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Atom(a), Value::Atom(b)) => a.cmp(b),
            (Value::Bag(a), Value::Bag(b)) => a.canonical_cmp(b),
            (Value::Atom(_), Value::Bag(_)) => Ordering::Less,
            (Value::Bag(_), Value::Atom(_)) => Ordering::Greater,
        }
    }
}

/// An ordered list of values; arity and value kinds match the schema
/// positionally.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Tuple(pub Vec<Value>);

impl Tuple {
    pub fn arity(&self) -> usize {
        self.0.len()
    }
}

/// A multiset of tuples. Element order carries no meaning; equality is
/// multiset equality, and [`canonicalize`] gives a deterministic view.
#[derive(Debug, Clone, Default)]
pub struct Bag {
    pub tuples: Vec<Tuple>,
}

impl PartialEq for Bag {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_cmp(other) == Ordering::Equal
    }
}
impl Eq for Bag {}

impl Bag {
    pub fn new(tuples: Vec<Tuple>) -> Self {
        Bag { tuples }
    }

    pub fn empty() -> Self {
        Bag { tuples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Compares two bags by their canonicalized tuple lists.
    pub fn canonical_cmp(&self, other: &Bag) -> Ordering {
        canonicalize(self).cmp(&canonicalize(other))
    }
}

/// Map from relation name to its bag.
pub type Instance = BTreeMap<String, Bag>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("schema {schema}: duplicate attribute {attribute}")]
    DuplicateAttribute { schema: String, attribute: String },
    #[error("{path}: arity {found} does not match schema arity {expected}")]
    ArityMismatch { path: String, expected: usize, found: usize },
    #[error("{path}: expected {expected}, found {found}")]
    KindMismatch { path: String, expected: String, found: String },
}

/// Validates every tuple of `bag` against `schema`, reporting the first
/// offending value path.
pub fn validate_against_schema(bag: &Bag, schema: &Schema) -> Result<(), ValidationError> {
    schema.check_well_formed()?;
    for (i, tuple) in bag.tuples.iter().enumerate() {
        let path = format!("{}[{}]", schema.name, i);
        validate_tuple(tuple, schema, &path)?;
    }
    Ok(())
}

fn validate_tuple(tuple: &Tuple, schema: &Schema, path: &str) -> Result<(), ValidationError> {
    if tuple.arity() != schema.arity() {
        return Err(ValidationError::ArityMismatch {
            path: path.to_string(),
            expected: schema.arity(),
            found: tuple.arity(),
        });
    }
    for (value, (attr, ty)) in tuple.0.iter().zip(&schema.attributes) {
        let vpath = format!("{path}.{attr}");
        match (value, ty) {
            (Value::Atom(a), AttrType::Atom(kind)) => {
                if a.kind() != *kind {
                    return Err(ValidationError::KindMismatch {
                        path: vpath,
                        expected: kind.to_string(),
                        found: a.kind().to_string(),
                    });
                }
            }
            (Value::Bag(inner), AttrType::Nested(inner_schema)) => {
                for (j, t) in inner.tuples.iter().enumerate() {
                    validate_tuple(t, inner_schema, &format!("{vpath}[{j}]"))?;
                }
            }
            (Value::Atom(a), AttrType::Nested(_)) => {
                return Err(ValidationError::KindMismatch {
                    path: vpath,
                    expected: "bag".to_string(),
                    found: a.kind().to_string(),
                });
            }
            (Value::Bag(_), AttrType::Atom(kind)) => {
                return Err(ValidationError::KindMismatch {
                    path: vpath,
                    expected: kind.to_string(),
                    found: "bag".to_string(),
                });
            }
        }
    }
    Ok(())
}

/// Returns the tuples of `bag` in the canonical total order: lexicographic
/// over values, nested bags compared by their canonicalized forms. The
/// result is independent of insertion order and idempotent.
pub fn canonicalize(bag: &Bag) -> Vec<Tuple> {
    let mut tuples = bag.tuples.clone();
    tuples.sort();
    tuples
}

// ---------------------------------------------------------------------------
// Text format
//
// One tuple per line, TAB-separated fields. A nested bag is rendered as
// `{(v,...),(v,...)}` with tuples in canonical order; the empty bag is `{}`.
// Text atoms that contain field or bag delimiters are double-quoted with
// backslash escapes.
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextFormatError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn needs_quoting(s: &str) -> bool {
    s.is_empty()
        || s.starts_with(' ')
        || s.ends_with(' ')
        || s.chars().any(|c| matches!(c, '\t' | '\n' | '\r' | ',' | '(' | ')' | '{' | '}' | '"'))
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn render_atom(a: &AtomValue) -> String {
    match a {
        AtomValue::Text(s) if needs_quoting(s) => quote(s),
        other => other.to_string(),
    }
}

fn render_value(v: &Value) -> String {
    match v {
        Value::Atom(a) => render_atom(a),
        Value::Bag(b) => {
            let mut out = String::from("{");
            for (i, t) in canonicalize(b).iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push('(');
                for (j, v) in t.0.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    out.push_str(&render_value(v));
                }
                out.push(')');
            }
            out.push('}');
            out
        }
    }
}

/// Renders a bag in the nested-relation text format, tuples in canonical
/// order.
pub fn render_bag(bag: &Bag) -> String {
    let mut out = String::new();
    for t in canonicalize(bag) {
        let fields: Vec<String> = t.0.iter().map(render_value).collect();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

/// Parses a bag from the nested-relation text format, directed by `schema`.
/// Blank lines are ignored.
pub fn parse_bag(input: &str, schema: &Schema) -> Result<Bag, TextFormatError> {
    let mut tuples = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line_num = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != schema.arity() {
            return Err(TextFormatError::Malformed {
                line: line_num,
                message: format!(
                    "expected {} fields, found {}",
                    schema.arity(),
                    fields.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, (attr, ty)) in fields.iter().zip(&schema.attributes) {
            let v = parse_value(field.trim(), ty).map_err(|m| TextFormatError::Malformed {
                line: line_num,
                message: format!("field {attr}: {m}"),
            })?;
            values.push(v);
        }
        tuples.push(Tuple(values));
    }
    Ok(Bag::new(tuples))
}

fn parse_value(s: &str, ty: &AttrType) -> Result<Value, String> {
    match ty {
        AttrType::Atom(kind) => parse_atom(s, *kind).map(Value::Atom),
        AttrType::Nested(schema) => parse_nested_bag(s, schema).map(Value::Bag),
    }
}

fn parse_atom(s: &str, kind: AtomKind) -> Result<AtomValue, String> {
    match kind {
        AtomKind::Int => s
            .parse::<i64>()
            .map(AtomValue::Int)
            .map_err(|_| format!("invalid int `{s}`")),
        AtomKind::Float => s
            .parse::<f64>()
            .map(AtomValue::Float)
            .map_err(|_| format!("invalid float `{s}`")),
        AtomKind::Bool => match s {
            "true" => Ok(AtomValue::Bool(true)),
            "false" => Ok(AtomValue::Bool(false)),
            _ => Err(format!("invalid bool `{s}`")),
        },
        AtomKind::Text => {
            if s.starts_with('"') {
                unquote(s).map(AtomValue::Text)
            } else {
                Ok(AtomValue::Text(s.to_string()))
            }
        }
    }
}

fn unquote(s: &str) -> Result<String, String> {
    let inner = s
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| format!("unterminated quoted string `{s}`"))?;
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some('t') => out.push('\t'),
                Some(other) => out.push(other),
                None => return Err("dangling escape".to_string()),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn parse_nested_bag(s: &str, schema: &Schema) -> Result<Bag, String> {
    let inner = s
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| format!("expected `{{...}}` bag, found `{s}`"))?;
    let mut tuples = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        if !rest.starts_with('(') {
            return Err(format!("expected `(` in bag, found `{rest}`"));
        }
        let (tuple_src, after) = split_balanced(rest)?;
        let fields = split_top_level_commas(tuple_src)?;
        if fields.len() != schema.arity() {
            return Err(format!(
                "nested tuple arity {} does not match schema arity {}",
                fields.len(),
                schema.arity()
            ));
        }
        let mut values = Vec::with_capacity(fields.len());
        for (field, (_, ty)) in fields.iter().zip(&schema.attributes) {
            values.push(parse_value(field.trim(), ty)?);
        }
        tuples.push(Tuple(values));
        rest = after.trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(format!("expected `,` between nested tuples, found `{rest}`"));
        }
    }
    Ok(Bag::new(tuples))
}

/// Splits `( ... )` at the matching close paren; returns the inside and the
/// remainder after the close paren. Quote-aware.
fn split_balanced(s: &str) -> Result<(&str, &str), String> {
    debug_assert!(s.starts_with('('));
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_quote = false;
            }
            continue;
        }
        match b {
            b'"' => in_quote = true,
            b'(' | b'{' => depth += 1,
            b')' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok((&s[1..i], &s[i + 1..]));
                }
            }
            _ => {}
        }
    }
    Err("unbalanced parentheses in nested bag".to_string())
}

fn split_top_level_commas(s: &str) -> Result<Vec<&str>, String> {
    let bytes = s.as_bytes();
    let mut parts = Vec::new();
    let mut start = 0usize;
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_quote = false;
            }
            continue;
        }
        match b {
            b'"' => in_quote = true,
            b'(' | b'{' => depth += 1,
            b')' | b'}' => {
                if depth == 0 {
                    return Err("unbalanced close delimiter".to_string());
                }
                depth -= 1;
            }
            b',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if in_quote {
        return Err("unterminated quote".to_string());
    }
    if depth != 0 {
        return Err("unbalanced open delimiter".to_string());
    }
    if !s.is_empty() {
        parts.push(&s[start..]);
    }
    Ok(parts)
}

/// Renders a tuple compactly as `(v,...)`; used for token display names.
pub fn render_tuple_compact(t: &Tuple) -> String {
    let mut out = String::from("(");
    for (i, v) in t.0.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&render_value(v));
    }
    out.push(')');
    out
}

// Convenience constructors, mostly for tests and generators.
pub fn int(i: i64) -> Value {
    Value::Atom(AtomValue::Int(i))
}
pub fn float(f: f64) -> Value {
    Value::Atom(AtomValue::Float(f))
}
pub fn text(s: impl Into<String>) -> Value {
    Value::Atom(AtomValue::Text(s.into()))
}
pub fn boolean(b: bool) -> Value {
    Value::Atom(AtomValue::Bool(b))
}
