//! Exhaustive enumeration of all documents of one size, for small sizes.
//!
//! Documents are listed once per derivation, so the list has exactly as many
//! entries as the counting table predicts. Leaves are rendered canonically
//! (the empty string for `text` and `data`, the literal for `value`), which
//! is what the sampler produces with [`DatatypeRegistry::canonical`].
//!
//! [`DatatypeRegistry::canonical`]: crate::datatypes::DatatypeRegistry::canonical

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_bigint::BigUint;
use thiserror::Error;

use crate::ast::{Grammar, Name, Pattern, PatternId};
use crate::counting::count_coefficients;
use crate::system::{compile, CompileError};
use crate::xml::{to_xml_string, SerializeError, XmlEvent};

pub const DEFAULT_ENUMERATION_BOUND: u64 = 10_000;

#[derive(Debug, Error)]
pub enum EnumerateError {
    #[error("{count} documents of size {size}, more than the bound of {bound}")]
    BoundExceeded { size: usize, count: BigUint, bound: u64 },
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

/// Part of an element's content: the attributes it contributes to the
/// enclosing element, and its child events.
#[derive(Clone, Debug, Default)]
struct Frag {
    attrs: Vec<(Arc<Name>, String)>,
    events: Vec<XmlEvent>,
}

impl Frag {
    fn concat(&self, other: &Frag) -> Frag {
        let mut attrs = self.attrs.clone();
        attrs.extend(other.attrs.iter().cloned());
        let mut events = self.events.clone();
        events.extend(other.events.iter().cloned());
        Frag { attrs, events }
    }
}

struct Enumerator<'g> {
    grammar: &'g Grammar,
    names: HashMap<PatternId, Arc<Name>>,
    memo: HashMap<(PatternId, usize), Rc<Vec<Frag>>>,
    seq_memo: HashMap<(PatternId, usize), Rc<Vec<Frag>>>,
}

impl Enumerator<'_> {
    fn name(&mut self, id: PatternId) -> Arc<Name> {
        let g = self.grammar;
        self.names
            .entry(id)
            .or_insert_with(|| match g.pattern(id) {
                Pattern::Element(n, _) | Pattern::Attribute(n, _) => Arc::new(n.clone()),
                _ => unreachable!(),
            })
            .clone()
    }

    fn frags(&mut self, id: PatternId, n: usize) -> Rc<Vec<Frag>> {
        if let Some(v) = self.memo.get(&(id, n)) {
            return v.clone();
        }
        let out = match self.grammar.pattern(id).clone() {
            Pattern::Choice(a, b) => {
                let mut v = (*self.frags(a, n)).clone();
                v.extend(self.frags(b, n).iter().cloned());
                v
            }
            Pattern::Group(a, b) => {
                let mut v = Vec::new();
                for k in 0..=n {
                    let left = self.frags(a, k);
                    if left.is_empty() {
                        continue;
                    }
                    let right = self.frags(b, n - k);
                    for l in left.iter() {
                        for r in right.iter() {
                            v.push(l.concat(r));
                        }
                    }
                }
                v
            }
            Pattern::OneOrMore(p) => (*self.sequences(p, n)).clone(),
            Pattern::Ref(d) => {
                let body = self.grammar.define(d).body;
                let Pattern::Element(_, content) = *self.grammar.pattern(body) else { unreachable!() };
                if n == 0 {
                    Vec::new()
                } else {
                    let name = self.name(body);
                    self.frags(content, n - 1)
                        .iter()
                        .map(|f| {
                            let mut events = Vec::with_capacity(f.events.len() + 2);
                            events.push(XmlEvent::StartElement { name: name.clone(), attributes: f.attrs.clone() });
                            events.extend(f.events.iter().cloned());
                            events.push(XmlEvent::EndElement { name: name.clone() });
                            Frag { attrs: Vec::new(), events }
                        })
                        .collect()
                }
            }
            Pattern::Attribute(_, v) => {
                if n == 0 {
                    Vec::new()
                } else {
                    let name = self.name(id);
                    self.frags(v, n - 1)
                        .iter()
                        .map(|f| {
                            let value: String = f
                                .events
                                .iter()
                                .map(|e| match e {
                                    XmlEvent::Text(t) => t.as_str(),
                                    _ => unreachable!("attribute values hold only text"),
                                })
                                .collect();
                            Frag { attrs: vec![(name.clone(), value)], events: Vec::new() }
                        })
                        .collect()
                }
            }
            Pattern::Text | Pattern::Data { .. } if n == 0 => {
                vec![Frag { attrs: Vec::new(), events: vec![XmlEvent::Text(String::new())] }]
            }
            Pattern::Value { literal, .. } if n == 0 => {
                vec![Frag { attrs: Vec::new(), events: vec![XmlEvent::Text(literal)] }]
            }
            Pattern::Empty if n == 0 => vec![Frag::default()],
            _ => Vec::new(),
        };
        let out = Rc::new(out);
        self.memo.insert((id, n), out.clone());
        out
    }

    /// Sequences of one or more `body` fragments, each of positive size.
    fn sequences(&mut self, body: PatternId, n: usize) -> Rc<Vec<Frag>> {
        if let Some(v) = self.seq_memo.get(&(body, n)) {
            return v.clone();
        }
        let mut v = (*self.frags(body, n)).clone();
        for k in 1..n {
            let first = self.frags(body, k);
            if first.is_empty() {
                continue;
            }
            let rest = self.sequences(body, n - k);
            for f in first.iter() {
                for r in rest.iter() {
                    v.push(f.concat(r));
                }
            }
        }
        let v = Rc::new(v);
        self.seq_memo.insert((body, n), v.clone());
        v
    }
}

/// Every document of exactly `size` elements plus attributes, serialized,
/// one entry per derivation. Fails if there are more than `bound`.
pub fn enumerate_documents(grammar: &Grammar, size: usize, bound: u64) -> Result<Vec<String>, EnumerateError> {
    let system = compile(grammar)?;
    let count = count_coefficients(&system, size).get(system.start(), size).clone();
    if count > BigUint::from(bound) {
        return Err(EnumerateError::BoundExceeded { size, count, bound });
    }
    let mut e = Enumerator { grammar, names: HashMap::new(), memo: HashMap::new(), seq_memo: HashMap::new() };
    let frags = e.frags(grammar.start(), size);
    frags.iter().map(|f| Ok(to_xml_string(&f.events)?)).collect()
}
