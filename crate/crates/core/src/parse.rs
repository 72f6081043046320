//! RELAX NG (XML syntax) reader and simplifier.
//!
//! Reading happens in two stages. The first walks the XML document and
//! produces a raw pattern arena in which the syntactic sugar is already
//! rewritten (`optional`, `zeroOrMore`, `mixed`, `interleave`, n-ary
//! `choice`/`group`) but references are still by name. The second stage
//! inlines every define whose body is not an element, hoists every element
//! into its own define, and drops whatever is unreachable from `start`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ast::{DefineId, Grammar, GrammarBuilder, Name, Pattern, PatternId, SourceInfo};

pub const RELAXNG_NAMESPACE: &str = "http://relaxng.org/ns/structure/1.0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Location {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("input is not valid UTF-8")]
    Encoding,
    #[error("root element is not in the RELAX NG namespace")]
    NotRelaxNg,
    #[error("unknown RELAX NG element <{0}>")]
    UnknownElement(String),
    #[error("reference to undefined pattern `{0}`")]
    DanglingRef(String),
    #[error("define `{0}` recurses without passing through an element")]
    UnguardedRecursion(String),
    #[error("unsupported RELAX NG feature: {0}")]
    Unsupported(String),
    #[error("element pattern inside an attribute")]
    ElementInAttribute,
    #[error("attribute pattern inside an attribute")]
    NestedAttribute,
    #[error("start pattern must be a choice of elements")]
    StartNotElement,
    #[error("{0}")]
    Malformed(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub location: Option<Location>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some(loc) => write!(f, "{loc}: {}", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

impl ParseError {
    fn at(kind: ParseErrorKind, location: Location) -> Self {
        ParseError { kind, location: Some(location) }
    }
}

type Result<T> = std::result::Result<T, ParseError>;

/// Parses a RELAX NG grammar in XML syntax and returns it in simplified
/// normal form.
pub fn parse_grammar(bytes: &[u8]) -> Result<Grammar> {
    let text = std::str::from_utf8(bytes).map_err(|_| ParseError { kind: ParseErrorKind::Encoding, location: None })?;
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        ParseError::at(ParseErrorKind::Xml(e.to_string()), Location { line: pos.row, column: pos.col })
    })?;
    let mut reader = Reader { doc: &doc, raw: Vec::new(), defines: BTreeMap::new(), starts: Vec::new() };
    let root = doc.root_element();
    if root.tag_name().namespace() != Some(RELAXNG_NAMESPACE) {
        return Err(ParseError::at(ParseErrorKind::NotRelaxNg, reader.loc(root)));
    }
    if root.tag_name().name() == "grammar" {
        reader.grammar_content(root)?;
    } else {
        let body = reader.pattern(root)?;
        reader.starts.push(Part { combine: None, body, loc: reader.loc(root) });
    }

    let source = SourceInfo { path: None, digest: crate::digest_hex(bytes), len: bytes.len() };
    Simplifier::new(reader.raw, reader.defines, reader.starts, root_loc(&doc))?.run(source)
}

fn root_loc(doc: &roxmltree::Document) -> Location {
    let pos = doc.text_pos_at(doc.root_element().range().start);
    Location { line: pos.row, column: pos.col }
}

#[derive(Clone, Debug)]
enum Raw {
    Choice(usize, usize),
    Group(usize, usize),
    OneOrMore(usize),
    Ref(String),
    Element(Name, usize),
    Attribute(Name, usize),
    Text,
    Data { datatype: String, params: Vec<(String, String)> },
    Value { datatype: String, literal: String },
    Empty,
    NotAllowed,
}

#[derive(Debug)]
struct RawNode {
    kind: Raw,
    loc: Location,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Combine {
    Choice,
    Interleave,
}

#[derive(Debug)]
struct Part {
    combine: Option<Combine>,
    body: usize,
    loc: Location,
}

struct Reader<'a, 'input> {
    doc: &'a roxmltree::Document<'input>,
    raw: Vec<RawNode>,
    defines: BTreeMap<String, Vec<Part>>,
    starts: Vec<Part>,
}

type XmlNode<'a, 'input> = roxmltree::Node<'a, 'input>;

fn is_rng(node: &XmlNode) -> bool {
    node.is_element() && node.tag_name().namespace() == Some(RELAXNG_NAMESPACE)
}

impl<'a, 'input> Reader<'a, 'input> {
    fn loc(&self, node: XmlNode) -> Location {
        let pos = self.doc.text_pos_at(node.range().start);
        Location { line: pos.row, column: pos.col }
    }

    fn push(&mut self, kind: Raw, loc: Location) -> usize {
        self.raw.push(RawNode { kind, loc });
        self.raw.len() - 1
    }

    fn grammar_content(&mut self, node: XmlNode) -> Result<()> {
        for child in node.children().filter(is_rng) {
            let loc = self.loc(child);
            match child.tag_name().name() {
                "start" => {
                    let combine = self.combine(child)?;
                    let body = self.single_child(child)?;
                    self.starts.push(Part { combine, body, loc });
                }
                "define" => {
                    let name = self.required_attr(child, "name")?;
                    let combine = self.combine(child)?;
                    let body = self.grouped_children(child)?;
                    self.defines.entry(name).or_default().push(Part { combine, body, loc });
                }
                "div" => self.grammar_content(child)?,
                "include" => return Err(unsupported("include", loc)),
                other => return Err(ParseError::at(ParseErrorKind::UnknownElement(other.into()), loc)),
            }
        }
        Ok(())
    }

    fn combine(&self, node: XmlNode) -> Result<Option<Combine>> {
        match node.attribute("combine").map(str::trim) {
            None => Ok(None),
            Some("choice") => Ok(Some(Combine::Choice)),
            Some("interleave") => Ok(Some(Combine::Interleave)),
            Some(other) => Err(ParseError::at(
                ParseErrorKind::Malformed(format!("invalid combine value `{other}`")),
                self.loc(node),
            )),
        }
    }

    fn required_attr(&self, node: XmlNode, name: &str) -> Result<String> {
        node.attribute(name).map(|s| s.trim().to_string()).ok_or_else(|| {
            ParseError::at(
                ParseErrorKind::Malformed(format!("<{}> requires a `{name}` attribute", node.tag_name().name())),
                self.loc(node),
            )
        })
    }

    fn single_child(&mut self, node: XmlNode) -> Result<usize> {
        let kids: Vec<_> = node.children().filter(is_rng).collect();
        if kids.len() != 1 {
            return Err(ParseError::at(
                ParseErrorKind::Malformed(format!("<{}> must contain exactly one pattern", node.tag_name().name())),
                self.loc(node),
            ));
        }
        self.pattern(kids[0])
    }

    /// All pattern children of `node`, grouped; at least one is required.
    fn grouped_children(&mut self, node: XmlNode) -> Result<usize> {
        let kids: Vec<_> = node.children().filter(is_rng).collect();
        self.fold(node, &kids, Raw::Group)
    }

    fn fold(&mut self, node: XmlNode, kids: &[XmlNode], op: fn(usize, usize) -> Raw) -> Result<usize> {
        let loc = self.loc(node);
        let mut ids = Vec::with_capacity(kids.len());
        for &k in kids {
            ids.push(self.pattern(k)?);
        }
        let Some(mut acc) = ids.pop() else {
            return Err(ParseError::at(
                ParseErrorKind::Malformed(format!("<{}> must contain at least one pattern", node.tag_name().name())),
                loc,
            ));
        };
        while let Some(prev) = ids.pop() {
            acc = self.push(op(prev, acc), loc);
        }
        Ok(acc)
    }

    fn pattern(&mut self, node: XmlNode) -> Result<usize> {
        let loc = self.loc(node);
        let kind = node.tag_name().name();
        match kind {
            "element" => {
                let names = self.name_class(node, true)?;
                let kids: Vec<_> = self.content_children(node);
                let content = self.fold(node, &kids, Raw::Group)?;
                self.expand_names(names, loc, |n| Raw::Element(n, content))
            }
            "attribute" => {
                let names = self.name_class(node, false)?;
                let kids: Vec<_> = self.content_children(node);
                let value = if kids.is_empty() {
                    self.push(Raw::Text, loc)
                } else if kids.len() == 1 {
                    self.pattern(kids[0])?
                } else {
                    return Err(ParseError::at(
                        ParseErrorKind::Malformed("<attribute> takes at most one pattern".into()),
                        loc,
                    ));
                };
                self.expand_names(names, loc, |n| Raw::Attribute(n, value))
            }
            "group" | "interleave" => self.grouped_children(node),
            "choice" => {
                let kids: Vec<_> = node.children().filter(is_rng).collect();
                self.fold(node, &kids, Raw::Choice)
            }
            "optional" => {
                let p = self.grouped_children(node)?;
                let e = self.push(Raw::Empty, loc);
                Ok(self.push(Raw::Choice(e, p), loc))
            }
            "zeroOrMore" => {
                let p = self.grouped_children(node)?;
                let seq = self.push(Raw::OneOrMore(p), loc);
                let e = self.push(Raw::Empty, loc);
                Ok(self.push(Raw::Choice(e, seq), loc))
            }
            "oneOrMore" => {
                let p = self.grouped_children(node)?;
                Ok(self.push(Raw::OneOrMore(p), loc))
            }
            "mixed" => {
                let p = self.grouped_children(node)?;
                let t = self.push(Raw::Text, loc);
                Ok(self.push(Raw::Group(t, p), loc))
            }
            "ref" => {
                let name = self.required_attr(node, "name")?;
                Ok(self.push(Raw::Ref(name), loc))
            }
            "empty" => Ok(self.push(Raw::Empty, loc)),
            "text" => Ok(self.push(Raw::Text, loc)),
            "notAllowed" => Ok(self.push(Raw::NotAllowed, loc)),
            "data" => {
                let datatype = self.required_attr(node, "type")?;
                let mut params = Vec::new();
                for child in node.children().filter(is_rng) {
                    match child.tag_name().name() {
                        "param" => {
                            let name = self.required_attr(child, "name")?;
                            params.push((name, text_content(child)));
                        }
                        // Leaf values are drawn from the datatype sampler; the
                        // exclusion set plays no combinatorial role.
                        "except" => {}
                        other => {
                            return Err(ParseError::at(ParseErrorKind::UnknownElement(other.into()), self.loc(child)))
                        }
                    }
                }
                Ok(self.push(Raw::Data { datatype, params }, loc))
            }
            "value" => {
                let datatype = node.attribute("type").map(|s| s.trim().to_string()).unwrap_or_else(|| "token".into());
                let literal = text_content(node);
                Ok(self.push(Raw::Value { datatype, literal }, loc))
            }
            "list" => Err(unsupported("list", loc)),
            "externalRef" => Err(unsupported("externalRef", loc)),
            "parentRef" => Err(unsupported("parentRef", loc)),
            "grammar" => Err(unsupported("nested grammar", loc)),
            other => Err(ParseError::at(ParseErrorKind::UnknownElement(other.into()), loc)),
        }
    }

    /// Pattern children of an element/attribute, skipping a leading name class.
    fn content_children(&self, node: XmlNode<'a, 'input>) -> Vec<XmlNode<'a, 'input>> {
        let mut kids: Vec<_> = node.children().filter(is_rng).collect();
        if node.attribute("name").is_none() && !kids.is_empty() {
            kids.remove(0);
        }
        kids
    }

    fn expand_names(&mut self, names: Vec<Name>, loc: Location, make: impl Fn(Name) -> Raw) -> Result<usize> {
        let ids: Vec<usize> = names.into_iter().map(|n| self.push(make(n), loc)).collect();
        let mut iter = ids.into_iter().rev();
        let mut acc = iter.next().expect("name class yields at least one name");
        for prev in iter {
            acc = self.push(Raw::Choice(prev, acc), loc);
        }
        Ok(acc)
    }

    /// Literal names of an element or attribute. Only `name` and choices of
    /// names are supported.
    fn name_class(&self, node: XmlNode, is_element: bool) -> Result<Vec<Name>> {
        if let Some(qname) = node.attribute("name") {
            let ns = if is_element { inherited_ns(node) } else { node.attribute("ns").unwrap_or("").to_string() };
            return Ok(vec![self.resolve_qname(node, qname.trim(), ns)?]);
        }
        let Some(first) = node.children().find(is_rng) else {
            return Err(ParseError::at(
                ParseErrorKind::Malformed(format!("<{}> has no name", node.tag_name().name())),
                self.loc(node),
            ));
        };
        let mut out = Vec::new();
        self.collect_names(first, &mut out)?;
        Ok(out)
    }

    fn collect_names(&self, node: XmlNode, out: &mut Vec<Name>) -> Result<()> {
        let loc = self.loc(node);
        match node.tag_name().name() {
            "name" => {
                let qname = text_content(node);
                out.push(self.resolve_qname(node, qname.trim(), inherited_ns(node))?);
                Ok(())
            }
            "choice" => {
                for child in node.children().filter(is_rng) {
                    self.collect_names(child, out)?;
                }
                Ok(())
            }
            "anyName" => Err(unsupported("anyName name class", loc)),
            "nsName" => Err(unsupported("nsName name class", loc)),
            other => Err(ParseError::at(ParseErrorKind::UnknownElement(other.into()), loc)),
        }
    }

    fn resolve_qname(&self, node: XmlNode, qname: &str, ns: String) -> Result<Name> {
        match qname.split_once(':') {
            None => Ok(Name { local: qname.to_string(), ns }),
            Some((prefix, local)) => {
                let uri = if prefix == "xml" {
                    Some(crate::ast::XML_NAMESPACE)
                } else {
                    node.lookup_namespace_uri(Some(prefix))
                };
                match uri {
                    Some(uri) => Ok(Name { local: local.to_string(), ns: uri.to_string() }),
                    None => Err(ParseError::at(
                        ParseErrorKind::Malformed(format!("undeclared prefix `{prefix}`")),
                        self.loc(node),
                    )),
                }
            }
        }
    }
}

fn unsupported(feature: &str, loc: Location) -> ParseError {
    ParseError::at(ParseErrorKind::Unsupported(feature.into()), loc)
}

fn inherited_ns(node: XmlNode) -> String {
    node.ancestors().filter(|n| n.is_element()).find_map(|n| n.attribute("ns")).unwrap_or("").to_string()
}

fn text_content(node: XmlNode) -> String {
    node.children().filter(|c| c.is_text()).filter_map(|c| c.text()).collect()
}

struct Simplifier {
    raw: Vec<RawNode>,
    /// Combined body of each define.
    bodies: BTreeMap<String, (usize, Location)>,
    start: usize,
    builder: GrammarBuilder,
    /// Raw element node -> the define it was hoisted into.
    hoisted: HashMap<usize, DefineId>,
    /// Define name to use for an element that is a define's direct body.
    preferred_name: HashMap<usize, String>,
    taken: HashSet<String>,
    pending: Vec<(DefineId, usize)>,
    inlining: Vec<String>,
}

impl Simplifier {
    fn new(
        mut raw: Vec<RawNode>,
        defines: BTreeMap<String, Vec<Part>>,
        starts: Vec<Part>,
        root: Location,
    ) -> Result<Self> {
        let mut combine_parts = |parts: Vec<Part>, what: &str| -> Result<(usize, Location)> {
            let explicit: Vec<_> = parts.iter().filter_map(|p| p.combine).collect();
            let missing = parts.len() - explicit.len();
            if missing > 1 {
                return Err(ParseError::at(
                    ParseErrorKind::Malformed(format!("multiple definitions of {what} without `combine`")),
                    parts[1].loc,
                ));
            }
            if explicit.windows(2).any(|w| w[0] != w[1]) {
                return Err(ParseError::at(
                    ParseErrorKind::Malformed(format!("conflicting `combine` values for {what}")),
                    parts[0].loc,
                ));
            }
            let op = explicit.first().copied().unwrap_or(Combine::Choice);
            let loc = parts[0].loc;
            let mut iter = parts.into_iter().rev();
            let mut acc = iter.next().expect("at least one part").body;
            for prev in iter {
                let kind = match op {
                    Combine::Choice => Raw::Choice(prev.body, acc),
                    Combine::Interleave => Raw::Group(prev.body, acc),
                };
                raw.push(RawNode { kind, loc: prev.loc });
                acc = raw.len() - 1;
            }
            Ok((acc, loc))
        };

        if starts.is_empty() {
            return Err(ParseError::at(ParseErrorKind::Malformed("grammar has no <start>".into()), root));
        }
        let (start, _) = combine_parts(starts, "start")?;
        let mut bodies = BTreeMap::new();
        for (name, parts) in defines {
            let combined = combine_parts(parts, &format!("`{name}`"))?;
            bodies.insert(name, combined);
        }

        let mut preferred_name = HashMap::new();
        for (name, &(body, _)) in &bodies {
            if matches!(raw[body].kind, Raw::Element(..)) {
                preferred_name.entry(body).or_insert_with(|| name.clone());
            }
        }

        Ok(Simplifier {
            raw,
            taken: bodies.keys().cloned().collect(),
            bodies,
            start,
            builder: GrammarBuilder::default(),
            hoisted: HashMap::new(),
            preferred_name,
            pending: Vec::new(),
            inlining: Vec::new(),
        })
    }

    fn run(mut self, source: SourceInfo) -> Result<Grammar> {
        self.check_refs()?;
        self.check_guarded_recursion()?;

        let start = self.translate(self.start, false)?;
        if !self.is_element_choice(start) {
            return Err(ParseError::at(ParseErrorKind::StartNotElement, self.raw[self.start].loc));
        }
        while let Some((id, raw_elem)) = self.pending.pop() {
            let Raw::Element(ref name, content) = self.raw[raw_elem].kind else {
                unreachable!("only elements are hoisted")
            };
            let name = name.clone();
            let content = self.translate(content, false)?;
            let body = self.builder.push(Pattern::Element(name, content));
            self.builder.set_body(id, body);
        }
        Ok(self.builder.finish(start, source))
    }

    fn is_element_choice(&self, id: PatternId) -> bool {
        match self.builder.pattern(id) {
            Pattern::Ref(_) | Pattern::NotAllowed => true,
            Pattern::Choice(a, b) => self.is_element_choice(*a) && self.is_element_choice(*b),
            _ => false,
        }
    }

    fn check_refs(&self) -> Result<()> {
        for node in &self.raw {
            if let Raw::Ref(name) = &node.kind {
                if !self.bodies.contains_key(name) {
                    return Err(ParseError::at(ParseErrorKind::DanglingRef(name.clone()), node.loc));
                }
            }
        }
        Ok(())
    }

    /// Rejects any cycle of references that does not pass through an
    /// element.
    fn check_guarded_recursion(&self) -> Result<()> {
        let mut edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (name, &(body, _)) in &self.bodies {
            let mut refs = Vec::new();
            self.unguarded_refs(body, &mut refs);
            let targets =
                refs.into_iter().filter(|r| !matches!(self.raw[self.bodies[*r].0].kind, Raw::Element(..))).collect();
            edges.insert(name.as_str(), targets);
        }

        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        let mut marks: HashMap<&str, Mark> = edges.keys().map(|k| (*k, Mark::New)).collect();
        for &root in edges.keys() {
            if marks[root] != Mark::New {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            marks.insert(root, Mark::Active);
            while let Some((node, i)) = stack.pop() {
                if let Some(&next) = edges[node].get(i) {
                    stack.push((node, i + 1));
                    match marks[next] {
                        Mark::Active => {
                            return Err(ParseError::at(
                                ParseErrorKind::UnguardedRecursion(next.to_string()),
                                self.bodies[next].1,
                            ))
                        }
                        Mark::New => {
                            marks.insert(next, Mark::Active);
                            stack.push((next, 0));
                        }
                        Mark::Done => {}
                    }
                } else {
                    marks.insert(node, Mark::Done);
                }
            }
        }
        Ok(())
    }

    fn unguarded_refs<'s>(&'s self, id: usize, out: &mut Vec<&'s str>) {
        match &self.raw[id].kind {
            Raw::Choice(a, b) | Raw::Group(a, b) => {
                self.unguarded_refs(*a, out);
                self.unguarded_refs(*b, out);
            }
            Raw::OneOrMore(p) | Raw::Attribute(_, p) => self.unguarded_refs(*p, out),
            Raw::Ref(name) => out.push(name),
            _ => {}
        }
    }

    fn translate(&mut self, id: usize, in_attribute: bool) -> Result<PatternId> {
        let loc = self.raw[id].loc;
        let p = match self.raw[id].kind.clone() {
            Raw::Choice(a, b) => {
                let a = self.translate(a, in_attribute)?;
                let b = self.translate(b, in_attribute)?;
                Pattern::Choice(a, b)
            }
            Raw::Group(a, b) => {
                let a = self.translate(a, in_attribute)?;
                let b = self.translate(b, in_attribute)?;
                Pattern::Group(a, b)
            }
            Raw::OneOrMore(p) => Pattern::OneOrMore(self.translate(p, in_attribute)?),
            Raw::Ref(name) => {
                let (body, _) = self.bodies[&name];
                if matches!(self.raw[body].kind, Raw::Element(..)) {
                    return self.translate(body, in_attribute);
                }
                if self.inlining.contains(&name) {
                    return Err(ParseError::at(ParseErrorKind::UnguardedRecursion(name), loc));
                }
                self.inlining.push(name);
                let r = self.translate(body, in_attribute);
                self.inlining.pop();
                return r;
            }
            Raw::Element(name, _) => {
                if in_attribute {
                    return Err(ParseError::at(ParseErrorKind::ElementInAttribute, loc));
                }
                let define = match self.hoisted.get(&id) {
                    Some(&d) => d,
                    None => {
                        let define_name = match self.preferred_name.get(&id) {
                            Some(n) => n.clone(),
                            None => self.fresh_name(&name.local),
                        };
                        let d = self.builder.declare(define_name);
                        self.hoisted.insert(id, d);
                        self.pending.push((d, id));
                        d
                    }
                };
                Pattern::Ref(define)
            }
            Raw::Attribute(name, value) => {
                if in_attribute {
                    return Err(ParseError::at(ParseErrorKind::NestedAttribute, loc));
                }
                Pattern::Attribute(name, self.translate(value, true)?)
            }
            Raw::Text => Pattern::Text,
            Raw::Data { datatype, params } => Pattern::Data { datatype, params },
            Raw::Value { datatype, literal } => Pattern::Value { datatype, literal },
            Raw::Empty => Pattern::Empty,
            Raw::NotAllowed => Pattern::NotAllowed,
        };
        Ok(self.builder.push(p))
    }

    fn fresh_name(&mut self, base: &str) -> String {
        let mut candidate = base.to_string();
        let mut k = 2;
        while self.taken.contains(&candidate) {
            candidate = format!("{base}-{k}");
            k += 1;
        }
        self.taken.insert(candidate.clone());
        candidate
    }
}
