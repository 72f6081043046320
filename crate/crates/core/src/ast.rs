//! Simplified RELAX NG pattern trees.
//!
//! A [`Grammar`] owns an arena of [`Pattern`] nodes addressed by
//! [`PatternId`]. After parsing, the arena is in normal form:
//!
//! - `Choice` and `Group` are binary (n-ary sources are right-folded),
//! - there are no `zeroOrMore`, `optional`, `interleave` or `mixed` nodes,
//! - every define body is an `Element`, and every `Ref` points at one,
//! - element nodes only ever appear as define bodies.
//!
//! The arena is laid out in a canonical depth-first order, so two grammars
//! describing the same simplified tree compare equal with `==`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

/// Namespace bound to the `xml:` prefix.
pub const XML_NAMESPACE: &str = "http://www.w3.org/XML/1998/namespace";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternId(pub(crate) u32);

impl PatternId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DefineId(pub(crate) u32);

impl DefineId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An element or attribute name with its namespace URI (empty for none).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Name {
    pub local: String,
    pub ns: String,
}

impl Name {
    pub fn new(local: impl Into<String>) -> Self {
        Name { local: local.into(), ns: String::new() }
    }

    pub fn with_ns(local: impl Into<String>, ns: impl Into<String>) -> Self {
        Name { local: local.into(), ns: ns.into() }
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ns.is_empty() {
            f.write_str(&self.local)
        } else {
            write!(f, "{{{}}}{}", self.ns, self.local)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Pattern {
    Choice(PatternId, PatternId),
    Group(PatternId, PatternId),
    OneOrMore(PatternId),
    Ref(DefineId),
    Element(Name, PatternId),
    Attribute(Name, PatternId),
    Text,
    Data { datatype: String, params: Vec<(String, String)> },
    Value { datatype: String, literal: String },
    Empty,
    NotAllowed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Define {
    pub name: String,
    pub body: PatternId,
}

/// Where a grammar came from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SourceInfo {
    pub path: Option<String>,
    /// Hex SHA-256 of the source bytes.
    pub digest: String,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct Grammar {
    pub(crate) patterns: Vec<Pattern>,
    pub(crate) start: PatternId,
    pub(crate) defines: Vec<Define>,
    pub(crate) source: SourceInfo,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.patterns == other.patterns && self.start == other.start && self.defines == other.defines
    }
}

impl Eq for Grammar {}

impl Grammar {
    pub fn pattern(&self, id: PatternId) -> &Pattern {
        &self.patterns[id.index()]
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn start(&self) -> PatternId {
        self.start
    }

    pub fn defines(&self) -> &[Define] {
        &self.defines
    }

    pub fn define(&self, id: DefineId) -> &Define {
        &self.defines[id.index()]
    }

    pub fn define_ids(&self) -> impl Iterator<Item = DefineId> {
        (0..self.defines.len() as u32).map(DefineId)
    }

    pub fn define_by_name(&self, name: &str) -> Option<DefineId> {
        self.defines.binary_search_by(|d| d.name.as_str().cmp(name)).ok().map(|i| DefineId(i as u32))
    }

    /// The element name and content pattern of a define.
    pub fn element_of(&self, id: DefineId) -> (&Name, PatternId) {
        match self.pattern(self.define(id).body) {
            Pattern::Element(name, content) => (name, *content),
            other => unreachable!("define body is not an element: {other:?}"),
        }
    }

    pub fn source(&self) -> &SourceInfo {
        &self.source
    }

    pub fn set_source_path(&mut self, path: impl Into<String>) {
        self.source.path = Some(path.into());
    }

    /// Number of element definitions.
    pub fn element_count(&self) -> usize {
        self.defines.len()
    }

    pub fn children(&self, id: PatternId) -> Children {
        match self.pattern(id) {
            Pattern::Choice(a, b) | Pattern::Group(a, b) => Children::Two(*a, *b),
            Pattern::OneOrMore(p) | Pattern::Element(_, p) | Pattern::Attribute(_, p) => Children::One(*p),
            _ => Children::None,
        }
    }

    /// Human-readable dump: one node per line, indented by depth, start
    /// first and then defines in name order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str("start\n");
        self.dump_node(self.start, 1, &mut out);
        for d in &self.defines {
            let _ = writeln!(out, "define {}", d.name);
            self.dump_node(d.body, 1, &mut out);
        }
        out
    }

    fn dump_node(&self, id: PatternId, depth: usize, out: &mut String) {
        for _ in 0..depth {
            out.push_str("  ");
        }
        match self.pattern(id) {
            Pattern::Choice(..) => out.push_str("choice"),
            Pattern::Group(..) => out.push_str("group"),
            Pattern::OneOrMore(_) => out.push_str("oneOrMore"),
            Pattern::Ref(d) => {
                let _ = write!(out, "ref {}", self.define(*d).name);
            }
            Pattern::Element(name, _) => {
                let _ = write!(out, "element {name}");
            }
            Pattern::Attribute(name, _) => {
                let _ = write!(out, "attribute {name}");
            }
            Pattern::Text => out.push_str("text"),
            Pattern::Data { datatype, params } => {
                let _ = write!(out, "data {datatype}");
                for (k, v) in params {
                    let _ = write!(out, " {k}={v:?}");
                }
            }
            Pattern::Value { datatype, literal } => {
                let _ = write!(out, "value {datatype} {literal:?}");
            }
            Pattern::Empty => out.push_str("empty"),
            Pattern::NotAllowed => out.push_str("notAllowed"),
        }
        out.push('\n');
        match self.children(id) {
            Children::None => {}
            Children::One(c) => self.dump_node(c, depth + 1, out),
            Children::Two(a, b) => {
                self.dump_node(a, depth + 1, out);
                self.dump_node(b, depth + 1, out);
            }
        }
    }

    /// Serializes the grammar as simple RELAX NG in XML syntax. Parsing the
    /// result yields a grammar equal to `self`.
    pub fn to_rng_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        out.push_str("<grammar xmlns=\"http://relaxng.org/ns/structure/1.0\">\n");
        out.push_str("  <start>\n");
        self.rng_node(self.start, 2, &mut out);
        out.push_str("  </start>\n");
        for d in &self.defines {
            let _ = writeln!(out, "  <define name=\"{}\">", escape_attr(&d.name));
            self.rng_node(d.body, 2, &mut out);
            out.push_str("  </define>\n");
        }
        out.push_str("</grammar>\n");
        out
    }

    fn rng_node(&self, id: PatternId, depth: usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        let name_attrs = |name: &Name| {
            let mut s = format!(" name=\"{}\"", escape_attr(&name.local));
            if !name.ns.is_empty() {
                let _ = write!(s, " ns=\"{}\"", escape_attr(&name.ns));
            }
            s
        };
        let (tag, attrs) = match self.pattern(id) {
            Pattern::Choice(..) => ("choice", String::new()),
            Pattern::Group(..) => ("group", String::new()),
            Pattern::OneOrMore(_) => ("oneOrMore", String::new()),
            Pattern::Ref(d) => {
                let _ = writeln!(out, "{indent}<ref name=\"{}\"/>", escape_attr(&self.define(*d).name));
                return;
            }
            Pattern::Element(name, _) => ("element", name_attrs(name)),
            Pattern::Attribute(name, _) => {
                // An explicit ns keeps the attribute out of any inherited namespace.
                let mut a = name_attrs(name);
                if name.ns.is_empty() {
                    a.push_str(" ns=\"\"");
                }
                ("attribute", a)
            }
            Pattern::Text => ("text", String::new()),
            Pattern::Empty => ("empty", String::new()),
            Pattern::NotAllowed => ("notAllowed", String::new()),
            Pattern::Data { datatype, params } => {
                let _ = write!(out, "{indent}<data type=\"{}\"", escape_attr(datatype));
                if params.is_empty() {
                    out.push_str("/>\n");
                } else {
                    out.push_str(">\n");
                    for (k, v) in params {
                        let _ =
                            writeln!(out, "{indent}  <param name=\"{}\">{}</param>", escape_attr(k), escape_text(v));
                    }
                    let _ = writeln!(out, "{indent}</data>");
                }
                return;
            }
            Pattern::Value { datatype, literal } => {
                let _ =
                    writeln!(out, "{indent}<value type=\"{}\">{}</value>", escape_attr(datatype), escape_text(literal));
                return;
            }
        };
        match self.children(id) {
            Children::None => {
                let _ = writeln!(out, "{indent}<{tag}{attrs}/>");
            }
            Children::One(c) => {
                let _ = writeln!(out, "{indent}<{tag}{attrs}>");
                self.rng_node(c, depth + 1, out);
                let _ = writeln!(out, "{indent}</{tag}>");
            }
            Children::Two(a, b) => {
                let _ = writeln!(out, "{indent}<{tag}{attrs}>");
                self.rng_node(a, depth + 1, out);
                self.rng_node(b, depth + 1, out);
                let _ = writeln!(out, "{indent}</{tag}>");
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Children {
    None,
    One(PatternId),
    Two(PatternId, PatternId),
}

fn escape_attr(s: &str) -> String {
    escape_text(s).replace('"', "&quot;")
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Builds a grammar in canonical arena order.
///
/// Patterns are appended through [`GrammarBuilder::push`]; define bodies may
/// be filled in after the define is declared, which lets recursive element
/// definitions refer to themselves.
#[derive(Debug, Default)]
pub(crate) struct GrammarBuilder {
    patterns: Vec<Pattern>,
    defines: Vec<(String, Option<PatternId>)>,
}

impl GrammarBuilder {
    pub fn push(&mut self, p: Pattern) -> PatternId {
        let id = PatternId(self.patterns.len() as u32);
        self.patterns.push(p);
        id
    }

    pub fn declare(&mut self, name: String) -> DefineId {
        let id = DefineId(self.defines.len() as u32);
        self.defines.push((name, None));
        id
    }

    pub fn set_body(&mut self, id: DefineId, body: PatternId) {
        self.defines[id.index()].1 = Some(body);
    }

    pub fn pattern(&self, id: PatternId) -> &Pattern {
        &self.patterns[id.index()]
    }

    /// Sorts defines by name and lays the arena out depth-first
    /// (pre-order), start first.
    pub fn finish(self, start: PatternId, source: SourceInfo) -> Grammar {
        let mut order: Vec<usize> = (0..self.defines.len()).collect();
        order.sort_by(|&a, &b| self.defines[a].0.cmp(&self.defines[b].0));
        let mut remap = vec![DefineId(0); self.defines.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = DefineId(new as u32);
        }

        let mut out = Vec::with_capacity(self.patterns.len());
        let start = copy_tree(&self.patterns, start, &remap, &mut out);
        let defines = order
            .iter()
            .map(|&old| {
                let (name, body) = &self.defines[old];
                let body = body.expect("define declared without a body");
                Define { name: name.clone(), body: copy_tree(&self.patterns, body, &remap, &mut out) }
            })
            .collect();
        Grammar { patterns: out, start, defines, source }
    }
}

fn copy_tree(src: &[Pattern], id: PatternId, remap: &[DefineId], out: &mut Vec<Pattern>) -> PatternId {
    let at = PatternId(out.len() as u32);
    // Reserve the slot first so the layout is pre-order.
    out.push(Pattern::Empty);
    let node = match &src[id.index()] {
        Pattern::Choice(a, b) => {
            let a = copy_tree(src, *a, remap, out);
            let b = copy_tree(src, *b, remap, out);
            Pattern::Choice(a, b)
        }
        Pattern::Group(a, b) => {
            let a = copy_tree(src, *a, remap, out);
            let b = copy_tree(src, *b, remap, out);
            Pattern::Group(a, b)
        }
        Pattern::OneOrMore(p) => Pattern::OneOrMore(copy_tree(src, *p, remap, out)),
        Pattern::Element(n, p) => Pattern::Element(n.clone(), copy_tree(src, *p, remap, out)),
        Pattern::Attribute(n, p) => Pattern::Attribute(n.clone(), copy_tree(src, *p, remap, out)),
        Pattern::Ref(d) => Pattern::Ref(remap[d.index()]),
        leaf => leaf.clone(),
    };
    out[at.index()] = node;
    at
}

/// Counts pattern kinds over the whole arena; used by normal-form checks
/// and statistics.
pub fn kind_histogram(grammar: &Grammar) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for p in grammar.patterns() {
        let k = match p {
            Pattern::Choice(..) => "choice",
            Pattern::Group(..) => "group",
            Pattern::OneOrMore(_) => "oneOrMore",
            Pattern::Ref(_) => "ref",
            Pattern::Element(..) => "element",
            Pattern::Attribute(..) => "attribute",
            Pattern::Text => "text",
            Pattern::Data { .. } => "data",
            Pattern::Value { .. } => "value",
            Pattern::Empty => "empty",
            Pattern::NotAllowed => "notAllowed",
        };
        *h.entry(k).or_insert(0) += 1;
    }
    h
}
