//! Structural validation of a parsed document against a grammar.
//!
//! Checks element and attribute names, nesting, order and cardinalities.
//! Text content is ignored and attribute values are only checked against
//! `value` literals, which is enough to tell whether a document was
//! derivable from the grammar's structure.

use std::collections::{BTreeSet, HashMap};

use roxmltree::{Document, Node, NodeId};
use thiserror::Error;

use crate::ast::{DefineId, Grammar, Name, Pattern, PatternId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("not well-formed XML: {0}")]
    Xml(String),
    #[error("root element `{0}` does not match the start pattern")]
    Root(String),
    #[error("element `{0}` has more than 64 attributes")]
    TooManyAttributes(String),
}

fn node_name(n: &Node) -> Name {
    Name::with_ns(n.tag_name().name(), n.tag_name().namespace().unwrap_or(""))
}

/// Positions reached while matching: index of the next child element and
/// the set of attributes already consumed.
type State = (usize, u64);

struct Validator<'g, 'a, 'input> {
    grammar: &'g Grammar,
    memo: HashMap<(NodeId, DefineId), bool>,
    _doc: std::marker::PhantomData<&'a Document<'input>>,
}

impl<'a, 'input: 'a> Validator<'_, 'a, 'input> {
    fn element(&mut self, node: Node<'a, 'input>, d: DefineId) -> Result<bool, ValidationError> {
        if let Some(&ok) = self.memo.get(&(node.id(), d)) {
            return Ok(ok);
        }
        let (name, content) = self.grammar.element_of(d);
        let ok = if *name != node_name(&node) {
            false
        } else {
            let children: Vec<Node> = node.children().filter(|c| c.is_element()).collect();
            let attrs: Vec<(Name, &str)> =
                node.attributes().map(|a| (Name::with_ns(a.name(), a.namespace().unwrap_or("")), a.value())).collect();
            if attrs.len() > 64 {
                return Err(ValidationError::TooManyAttributes(node_name(&node).to_string()));
            }
            let full = if attrs.len() == 64 { u64::MAX } else { (1u64 << attrs.len()) - 1 };
            let ends = self.states(content, BTreeSet::from([(0, 0)]), &children, &attrs)?;
            ends.contains(&(children.len(), full))
        };
        self.memo.insert((node.id(), d), ok);
        Ok(ok)
    }

    fn states(
        &mut self,
        id: PatternId,
        from: BTreeSet<State>,
        children: &[Node<'a, 'input>],
        attrs: &[(Name, &str)],
    ) -> Result<BTreeSet<State>, ValidationError> {
        if from.is_empty() {
            return Ok(from);
        }
        Ok(match self.grammar.pattern(id) {
            Pattern::Choice(a, b) => {
                let (a, b) = (*a, *b);
                let mut out = self.states(a, from.clone(), children, attrs)?;
                out.extend(self.states(b, from, children, attrs)?);
                out
            }
            Pattern::Group(a, b) => {
                let (a, b) = (*a, *b);
                let mid = self.states(a, from, children, attrs)?;
                self.states(b, mid, children, attrs)?
            }
            Pattern::OneOrMore(p) => {
                let p = *p;
                let mut out = BTreeSet::new();
                let mut frontier = self.states(p, from, children, attrs)?;
                while !frontier.is_empty() {
                    let fresh: BTreeSet<State> = frontier.difference(&out).copied().collect();
                    out.extend(fresh.iter().copied());
                    frontier = self.states(p, fresh, children, attrs)?;
                }
                out
            }
            Pattern::Ref(d) => {
                let d = *d;
                let mut out = BTreeSet::new();
                for (pos, mask) in from {
                    if let Some(child) = children.get(pos) {
                        if self.element(*child, d)? {
                            out.insert((pos + 1, mask));
                        }
                    }
                }
                out
            }
            Pattern::Attribute(name, value) => {
                let mut out = BTreeSet::new();
                for (pos, mask) in from {
                    for (i, (n, v)) in attrs.iter().enumerate() {
                        if mask & (1 << i) == 0 && n == name && self.value_matches(*value, v) {
                            out.insert((pos, mask | (1 << i)));
                        }
                    }
                }
                out
            }
            Pattern::Text | Pattern::Data { .. } | Pattern::Value { .. } | Pattern::Empty => from,
            Pattern::NotAllowed => BTreeSet::new(),
            Pattern::Element(..) => unreachable!("elements only occur as define bodies"),
        })
    }

    fn value_matches(&self, id: PatternId, v: &str) -> bool {
        match self.grammar.pattern(id) {
            Pattern::Choice(a, b) => self.value_matches(*a, v) || self.value_matches(*b, v),
            Pattern::Value { datatype, literal } => {
                if datatype == "string" {
                    v == literal
                } else {
                    v.split_whitespace().eq(literal.split_whitespace())
                }
            }
            Pattern::Empty => v.is_empty(),
            Pattern::NotAllowed => false,
            _ => true,
        }
    }
}

/// Validates `xml` against `grammar` and returns the document size
/// (elements plus attributes).
pub fn validate_document(grammar: &Grammar, xml: &str) -> Result<u64, ValidationError> {
    let doc = Document::parse(xml).map_err(|e| ValidationError::Xml(e.to_string()))?;
    let root = doc.root_element();
    let mut v = Validator { grammar, memo: HashMap::new(), _doc: std::marker::PhantomData };
    let mut roots = Vec::new();
    let mut stack = vec![grammar.start()];
    while let Some(p) = stack.pop() {
        match grammar.pattern(p) {
            Pattern::Choice(a, b) => stack.extend([*a, *b]),
            Pattern::Ref(d) => roots.push(*d),
            _ => {}
        }
    }
    let mut matched = false;
    for d in roots {
        if v.element(root, d)? {
            matched = true;
            break;
        }
    }
    if !matched {
        return Err(ValidationError::Root(node_name(&root).to_string()));
    }
    let size = doc.descendants().filter(|n| n.is_element()).map(|n| 1 + n.attributes().len() as u64).sum();
    Ok(size)
}
