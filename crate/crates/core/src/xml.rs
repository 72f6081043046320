//! XML events and an incremental writer.
//!
//! The writer never buffers document content: every event is written to the
//! underlying sink as soon as it arrives. The only state it keeps besides a
//! depth counter is the stack of default-namespace changes, which stays
//! empty for documents in a single namespace.

use std::io::{self, Write};
use std::sync::Arc;

use thiserror::Error;

use crate::ast::{Name, XML_NAMESPACE};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum XmlEvent {
    StartElement { name: Arc<Name>, attributes: Vec<(Arc<Name>, String)> },
    EndElement { name: Arc<Name> },
    Text(String),
}

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("write failed after {written} bytes: {source}")]
    Io { source: io::Error, written: u64 },
    #[error("unbalanced event stream: {0}")]
    Unbalanced(&'static str),
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
}

impl SerializeError {
    /// True when some output already reached the sink before the failure.
    pub fn partial_output(&self) -> bool {
        matches!(self, SerializeError::Io { written, .. } if *written > 0)
    }
}

/// Anything that consumes a stream of [`XmlEvent`]s.
pub trait EventSink {
    fn event(&mut self, event: XmlEvent) -> Result<(), SerializeError>;
}

impl EventSink for Vec<XmlEvent> {
    fn event(&mut self, event: XmlEvent) -> Result<(), SerializeError> {
        self.push(event);
        Ok(())
    }
}

pub struct XmlWriter<W: Write> {
    out: W,
    written: u64,
    depth: usize,
    /// A start tag is open and may still become `<a/>`.
    tag_open: bool,
    /// `(depth, uri)` for each element that changed the default namespace.
    default_ns: Vec<(usize, Arc<str>)>,
}

impl<W: Write> XmlWriter<W> {
    pub fn new(out: W) -> Self {
        XmlWriter { out, written: 0, depth: 0, tag_open: false, default_ns: Vec::new() }
    }

    pub fn with_declaration(out: W) -> Result<Self, SerializeError> {
        let mut w = XmlWriter::new(out);
        w.raw("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n")?;
        Ok(w)
    }

    pub fn bytes_written(&self) -> u64 {
        self.written
    }

    /// Heap bytes the writer itself retains, independent of the sink.
    pub fn retained_bytes(&self) -> usize {
        self.default_ns.capacity() * std::mem::size_of::<(usize, Arc<str>)>()
            + self.default_ns.iter().map(|(_, s)| s.len()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn get_ref(&self) -> &W {
        &self.out
    }

    /// Checks the stream is balanced and flushes the sink.
    pub fn finish(mut self) -> Result<W, SerializeError> {
        if self.depth != 0 {
            return Err(SerializeError::Unbalanced("unclosed elements at end of stream"));
        }
        self.out.flush().map_err(|source| SerializeError::Io { source, written: self.written })?;
        Ok(self.out)
    }

    fn raw(&mut self, s: &str) -> Result<(), SerializeError> {
        self.out.write_all(s.as_bytes()).map_err(|source| SerializeError::Io { source, written: self.written })?;
        self.written += s.len() as u64;
        Ok(())
    }

    fn escaped(&mut self, s: &str, in_attribute: bool) -> Result<(), SerializeError> {
        let mut last = 0;
        for (i, ch) in s.char_indices() {
            let rep = match ch {
                '&' => "&amp;",
                '<' => "&lt;",
                '>' => "&gt;",
                '"' if in_attribute => "&quot;",
                '\'' if in_attribute => "&apos;",
                '\t' if in_attribute => "&#9;",
                '\n' if in_attribute => "&#10;",
                '\r' => "&#13;",
                _ => continue,
            };
            self.raw(&s[last..i])?;
            self.raw(rep)?;
            last = i + ch.len_utf8();
        }
        self.raw(&s[last..])
    }

    fn close_open_tag(&mut self) -> Result<(), SerializeError> {
        if self.tag_open {
            self.tag_open = false;
            self.raw(">")?;
        }
        Ok(())
    }

    fn current_default_ns(&self) -> &str {
        self.default_ns.last().map_or("", |(_, ns)| ns)
    }

    pub fn write_event(&mut self, event: &XmlEvent) -> Result<(), SerializeError> {
        match event {
            XmlEvent::StartElement { name, attributes } => {
                for (i, (a, _)) in attributes.iter().enumerate() {
                    if attributes[..i].iter().any(|(b, _)| b == a) {
                        return Err(SerializeError::DuplicateAttribute(a.to_string()));
                    }
                }
                self.close_open_tag()?;
                self.depth += 1;
                self.raw("<")?;
                self.raw(&name.local)?;
                if name.ns != self.current_default_ns() {
                    self.raw(" xmlns=\"")?;
                    self.escaped(&name.ns, true)?;
                    self.raw("\"")?;
                    self.default_ns.push((self.depth, Arc::from(name.ns.as_str())));
                }
                let mut prefixes: Vec<&str> = Vec::new();
                for (attr, value) in attributes {
                    self.raw(" ")?;
                    if attr.ns == XML_NAMESPACE {
                        self.raw("xml:")?;
                    } else if !attr.ns.is_empty() {
                        let k = match prefixes.iter().position(|p| *p == attr.ns) {
                            Some(k) => k,
                            None => {
                                prefixes.push(&attr.ns);
                                let k = prefixes.len() - 1;
                                self.raw(&format!("xmlns:ns{k}=\""))?;
                                self.escaped(&attr.ns, true)?;
                                self.raw("\" ")?;
                                k
                            }
                        };
                        self.raw(&format!("ns{k}:"))?;
                    }
                    self.raw(&attr.local)?;
                    self.raw("=\"")?;
                    self.escaped(value, true)?;
                    self.raw("\"")?;
                }
                self.tag_open = true;
            }
            XmlEvent::EndElement { name } => {
                if self.depth == 0 {
                    return Err(SerializeError::Unbalanced("end element without matching start"));
                }
                if self.tag_open {
                    self.tag_open = false;
                    self.raw("/>")?;
                } else {
                    self.raw("</")?;
                    self.raw(&name.local)?;
                    self.raw(">")?;
                }
                if self.default_ns.last().is_some_and(|(d, _)| *d == self.depth) {
                    self.default_ns.pop();
                }
                self.depth -= 1;
                if self.depth == 0 {
                    self.raw("\n")?;
                }
            }
            XmlEvent::Text(text) => {
                if self.depth == 0 {
                    return Err(SerializeError::Unbalanced("text outside the root element"));
                }
                if !text.is_empty() {
                    self.close_open_tag()?;
                    self.escaped(text, false)?;
                }
            }
        }
        Ok(())
    }
}

impl<W: Write> EventSink for XmlWriter<W> {
    fn event(&mut self, event: XmlEvent) -> Result<(), SerializeError> {
        self.write_event(&event)
    }
}

/// Writes a complete event stream and returns the number of bytes written.
pub fn serialize_stream<W: Write>(events: impl IntoIterator<Item = XmlEvent>, sink: W) -> Result<u64, SerializeError> {
    let mut w = XmlWriter::new(sink);
    for e in events {
        w.write_event(&e)?;
    }
    let n = w.bytes_written();
    w.finish()?;
    Ok(n)
}

/// Serializes events into a string.
pub fn to_xml_string(events: &[XmlEvent]) -> Result<String, SerializeError> {
    let mut buf = Vec::new();
    serialize_stream(events.iter().cloned(), &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn name(s: &str) -> Arc<Name> {
        Arc::new(Name::new(s))
    }

    #[test]
    fn empty_element_form() {
        let a = name("a");
        let events = vec![
            XmlEvent::StartElement { name: a.clone(), attributes: vec![(name("x"), "v".into())] },
            XmlEvent::EndElement { name: a },
        ];
        assert_eq!(to_xml_string(&events).unwrap(), "<a x=\"v\"/>\n");
    }

    #[test]
    fn text_escaping() {
        let a = name("a");
        let events = vec![
            XmlEvent::StartElement { name: a.clone(), attributes: vec![] },
            XmlEvent::Text("1<2".into()),
            XmlEvent::EndElement { name: a },
        ];
        assert_eq!(to_xml_string(&events).unwrap(), "<a>1&lt;2</a>\n");
    }

    #[test]
    fn attribute_escaping() {
        let a = name("a");
        let events = vec![
            XmlEvent::StartElement { name: a.clone(), attributes: vec![(name("q"), "\"&'<>\n".into())] },
            XmlEvent::EndElement { name: a },
        ];
        let s = to_xml_string(&events).unwrap();
        assert_eq!(s, "<a q=\"&quot;&amp;&apos;&lt;&gt;&#10;\"/>\n");
        let doc = roxmltree::Document::parse(&s).unwrap();
        assert_eq!(doc.root_element().attribute("q"), Some("\"&'<>\n"));
    }

    #[test]
    fn namespaces_declared_on_change() {
        let outer = Arc::new(Name::with_ns("a", "urn:a"));
        let inner = Arc::new(Name::with_ns("b", "urn:a"));
        let other = Arc::new(Name::new("c"));
        let lang = Arc::new(Name::with_ns("lang", XML_NAMESPACE));
        let foreign = Arc::new(Name::with_ns("f", "urn:f"));
        let events = vec![
            XmlEvent::StartElement { name: outer.clone(), attributes: vec![(lang, "en".into())] },
            XmlEvent::StartElement { name: inner.clone(), attributes: vec![] },
            XmlEvent::EndElement { name: inner },
            XmlEvent::StartElement { name: other.clone(), attributes: vec![(foreign, "1".into())] },
            XmlEvent::EndElement { name: other },
            XmlEvent::EndElement { name: outer },
        ];
        let s = to_xml_string(&events).unwrap();
        let doc = roxmltree::Document::parse(&s).unwrap();
        let root = doc.root_element();
        assert_eq!(root.tag_name().namespace(), Some("urn:a"));
        let kids: Vec<_> = root.children().filter(|n| n.is_element()).collect();
        assert_eq!(kids[0].tag_name().namespace(), Some("urn:a"));
        assert_eq!(kids[1].tag_name().namespace().unwrap_or(""), "");
        assert_eq!(kids[1].attribute(("urn:f", "f")), Some("1"));
        assert_eq!(root.attribute((XML_NAMESPACE, "lang")), Some("en"));
    }

    #[test]
    fn unbalanced_and_duplicate_rejected() {
        let a = name("a");
        let mut w = XmlWriter::new(Vec::new());
        assert!(matches!(w.write_event(&XmlEvent::EndElement { name: a.clone() }), Err(SerializeError::Unbalanced(_))));
        let dup = XmlEvent::StartElement {
            name: a.clone(),
            attributes: vec![(name("x"), "1".into()), (name("x"), "2".into())],
        };
        assert!(matches!(w.write_event(&dup), Err(SerializeError::DuplicateAttribute(_))));
        w.write_event(&XmlEvent::StartElement { name: a, attributes: vec![] }).unwrap();
        assert!(matches!(w.finish(), Err(SerializeError::Unbalanced(_))));
    }

    struct FailAfter(usize);

    impl Write for FailAfter {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            if self.0 < buf.len() {
                return Err(io::Error::other("disk full"));
            }
            self.0 -= buf.len();
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn sink_failure_reports_partial_output() {
        let a = name("a");
        let events = vec![
            XmlEvent::StartElement { name: a.clone(), attributes: vec![] },
            XmlEvent::Text("hello".into()),
            XmlEvent::EndElement { name: a },
        ];
        let err = serialize_stream(events.clone(), FailAfter(4)).unwrap_err();
        assert!(err.partial_output());
        let err = serialize_stream(events, FailAfter(0)).unwrap_err();
        assert!(!err.partial_output());
    }
}
