//! Boltzmann sampling of documents.
//!
//! The sampler walks the grammar with an explicit work stack. A choice takes
//! its left branch with probability `A(x) / (A(x) + B(x))`, a `oneOrMore`
//! repeats its body `k ≥ 1` times with `P(k = j) = (1 − P)·P^(j−1)` where
//! `P` is the body's value, and a reference continues at the referenced
//! element. Every document of size `n` is drawn with probability
//! proportional to `x^n`, hence uniformly within a size class.
//!
//! Structural decisions and leaf values use separate random streams. A
//! windowed draw first runs a count-only pass and, once a size lands in the
//! window, replays the same structural stream while emitting events. Only the
//! accepted document is ever written to the sink.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ast::{DefineId, Grammar, Name, Pattern, PatternId};
use crate::datatypes::{default_datatype_samplers, DatatypeRegistry, TEXT_DATATYPE};
use crate::newton::OracleTable;
use crate::system::{compile, ClassOrigin, CompileError};
use crate::xml::{EventSink, SerializeError, XmlEvent, XmlWriter};

pub const DEFAULT_MAX_ATTEMPTS: u64 = 10_000;
pub const DEFAULT_TOLERANCE: f64 = 0.1;

/// Accepted sizes `[n(1 − ε), n(1 + ε)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeWindow {
    target: u64,
    tolerance: f64,
}

impl SizeWindow {
    pub fn new(target: u64, tolerance: f64) -> Result<Self, SampleError> {
        if target == 0 {
            return Err(SampleError::InvalidConfig("target size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&tolerance) {
            return Err(SampleError::InvalidConfig(format!("tolerance {tolerance} outside [0, 1]")));
        }
        Ok(SizeWindow { target, tolerance })
    }

    pub fn exact(target: u64) -> Result<Self, SampleError> {
        SizeWindow::new(target, 0.0)
    }

    pub fn target(&self) -> u64 {
        self.target
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn lower(&self) -> u64 {
        (snap(self.target as f64 * (1.0 - self.tolerance)).floor() as u64).max(1)
    }

    pub fn upper(&self) -> u64 {
        (snap(self.target as f64 * (1.0 + self.tolerance)).ceil() as u64).max(self.lower())
    }

    pub fn contains(&self, size: u64) -> bool {
        (self.lower()..=self.upper()).contains(&size)
    }
}

/// Rounds values within floating-point noise of an integer onto it, so that
/// `100 · (1 − 0.2)` gives 80 rather than 79.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) {
        r
    } else {
        v
    }
}

#[derive(Clone, Debug)]
pub struct SamplerConfig {
    pub window: SizeWindow,
    pub seed: u64,
    pub max_attempts: u64,
    /// Free samples are abandoned once their size passes this.
    pub hard_size_ceiling: u64,
    pub registry: DatatypeRegistry,
}

impl SamplerConfig {
    pub fn new(window: SizeWindow) -> Self {
        SamplerConfig {
            window,
            seed: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            hard_size_ceiling: window.upper(),
            registry: default_datatype_samplers(),
        }
    }

    pub fn validate(&self) -> Result<(), SampleError> {
        if self.max_attempts == 0 {
            return Err(SampleError::InvalidConfig("max attempts must be at least 1".into()));
        }
        if self.hard_size_ceiling < self.window.upper() {
            return Err(SampleError::InvalidConfig(format!(
                "hard size ceiling {} is below the window's upper bound {}",
                self.hard_size_ceiling,
                self.window.upper()
            )));
        }
        Ok(())
    }
}

/// Sizes observed across rejected attempts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SizeHistogram {
    pub sizes: BTreeMap<u64, u64>,
    /// Attempts abandoned past the ceiling.
    pub aborted: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttemptStats {
    pub attempts: u64,
    pub size: u64,
    pub rejected: SizeHistogram,
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("size passed the ceiling of {ceiling}")]
    CeilingExceeded { ceiling: u64 },
    #[error("no sampler registered for datatype `{0}`")]
    MissingDatatype(String),
    #[error("no document in the size window after {attempts} attempts")]
    Exhausted { attempts: u64, histogram: SizeHistogram },
    #[error("oracle was solved for system {found}, but the grammar compiles to {expected}; re-run solve")]
    DigestMismatch { expected: String, found: String },
    #[error("oracle parameter x = {x} is not below the singularity estimate {rho}; re-run solve with a smaller x")]
    AboveSingularity { x: f64, rho: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("attribute `{0}` generated twice on one element")]
    DuplicateAttribute(String),
    #[error("sampler reached a pattern with zero weight")]
    ZeroWeight,
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
}

enum Task {
    Element(DefineId),
    End(DefineId),
    Leaf(PatternId),
}

enum Item {
    Child(DefineId),
    Leaf(PatternId),
}

enum Work {
    Node(PatternId),
    Repeat(PatternId, u64),
}

struct Emitter<'s> {
    sink: &'s mut dyn EventSink,
    leaf_rng: ChaCha8Rng,
}

/// A sampler bound to one grammar and one solved oracle.
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    x: f64,
    /// Generating-function value of every pattern node at `x`.
    values: Vec<f64>,
    names: Vec<Option<Arc<Name>>>,
    registry: DatatypeRegistry,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar, oracle: &OracleTable, registry: DatatypeRegistry) -> Result<Self, SampleError> {
        let system = compile(grammar)?;
        let expected = system.digest();
        if oracle.system_digest != expected {
            return Err(SampleError::DigestMismatch { expected, found: oracle.system_digest.clone() });
        }
        if let Some(b) = oracle.bracket {
            if oracle.x >= b.lo {
                return Err(SampleError::AboveSingularity { x: oracle.x, rho: b.lo });
            }
        }

        let mut seq_class = BTreeMap::new();
        for c in system.class_ids() {
            if let Some(ClassOrigin::Sequence(p)) = system.class(c).origin {
                seq_class.insert(p, c);
            }
        }
        let x = oracle.x;
        let mut values = vec![0.0; grammar.patterns().len()];
        let mut names = vec![None; grammar.patterns().len()];
        // Pre-order layout: children always sit after their parent.
        for (i, p) in grammar.patterns().iter().enumerate().rev() {
            values[i] = match p {
                Pattern::Choice(a, b) => values[a.index()] + values[b.index()],
                Pattern::Group(a, b) => values[a.index()] * values[b.index()],
                Pattern::OneOrMore(_) => oracle.value(seq_class[&PatternId(i as u32)]),
                Pattern::Ref(d) => oracle.values[d.index()],
                Pattern::Element(name, content) | Pattern::Attribute(name, content) => {
                    names[i] = Some(Arc::new(name.clone()));
                    x * values[content.index()]
                }
                Pattern::Text | Pattern::Data { .. } | Pattern::Value { .. } | Pattern::Empty => 1.0,
                Pattern::NotAllowed => 0.0,
            };
        }

        for p in grammar.patterns() {
            let needed = match p {
                Pattern::Data { datatype, .. } => datatype.as_str(),
                Pattern::Text => TEXT_DATATYPE,
                _ => continue,
            };
            if !registry.contains(needed) {
                return Err(SampleError::MissingDatatype(needed.to_string()));
            }
        }
        Ok(Sampler { grammar, x, values, names, registry })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    /// Generating-function value of a pattern node at the oracle's `x`.
    pub fn value(&self, id: PatternId) -> f64 {
        self.values[id.index()]
    }

    /// Probability of taking the left branch of a choice node.
    pub fn left_probability(&self, id: PatternId) -> f64 {
        let Pattern::Choice(a, b) = self.grammar.pattern(id) else { panic!("not a choice node") };
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        if va + vb > 0.0 {
            va / (va + vb)
        } else {
            0.5
        }
    }

    fn choose_left<R: Rng + ?Sized>(&self, id: PatternId, rng: &mut R) -> Result<bool, SampleError> {
        let Pattern::Choice(a, b) = self.grammar.pattern(id) else { unreachable!() };
        let (va, vb) = (self.values[a.index()], self.values[b.index()]);
        if !(va + vb > 0.0) {
            return Err(SampleError::ZeroWeight);
        }
        Ok(rng.random::<f64>() * (va + vb) < va)
    }

    /// Draws a full document, writing its events to `sink` as they are
    /// produced. Returns its size, or `CeilingExceeded` as soon as the
    /// running size passes `ceiling` (the sink then holds a partial stream).
    pub fn free_sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        ceiling: u64,
        sink: &mut dyn EventSink,
    ) -> Result<u64, SampleError> {
        let leaf_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        self.run(rng, ceiling, Some(Emitter { sink, leaf_rng }))
    }

    /// Same draw as [`Sampler::free_sample`] with the same random stream,
    /// but only the size is computed.
    pub fn free_size<R: Rng + ?Sized>(&self, rng: &mut R, ceiling: u64) -> Result<u64, SampleError> {
        let _ = rng.next_u64();
        self.run(rng, ceiling, None)
    }

    /// Draws a document and returns its events.
    pub fn free_sample_events<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        ceiling: u64,
    ) -> Result<(Vec<XmlEvent>, u64), SampleError> {
        let mut events = Vec::new();
        let size = self.free_sample(rng, ceiling, &mut events)?;
        Ok((events, size))
    }

    /// Repeats free draws until one lands in `window`, then writes that one
    /// to `sink`.
    pub fn sample_in_window<R: Rng + Clone>(
        &self,
        rng: &mut R,
        window: &SizeWindow,
        max_attempts: u64,
        sink: &mut dyn EventSink,
    ) -> Result<AttemptStats, SampleError> {
        let ceiling = window.upper();
        let mut rejected = SizeHistogram::default();
        for attempt in 1..=max_attempts {
            let snapshot = rng.clone();
            match self.free_size(rng, ceiling) {
                Ok(size) if window.contains(size) => {
                    let mut replay = snapshot;
                    let emitted = self.free_sample(&mut replay, ceiling, sink)?;
                    debug_assert_eq!(emitted, size);
                    *rng = replay;
                    return Ok(AttemptStats { attempts: attempt, size, rejected });
                }
                Ok(size) => *rejected.sizes.entry(size).or_insert(0) += 1,
                Err(SampleError::CeilingExceeded { .. }) => rejected.aborted += 1,
                Err(e) => return Err(e),
            }
        }
        Err(SampleError::Exhausted { attempts: max_attempts, histogram: rejected })
    }

    fn run<R: Rng + ?Sized>(&self, rng: &mut R, ceiling: u64, mut emit: Option<Emitter>) -> Result<u64, SampleError> {
        let g = self.grammar;
        let mut size = 0u64;
        let bump = |size: &mut u64| {
            *size += 1;
            if *size > ceiling {
                Err(SampleError::CeilingExceeded { ceiling })
            } else {
                Ok(())
            }
        };

        // The start pattern is a choice of element references.
        let mut at = g.start();
        let root = loop {
            match g.pattern(at) {
                Pattern::Choice(a, b) => at = if self.choose_left(at, rng)? { *a } else { *b },
                Pattern::Ref(d) => break *d,
                _ => return Err(SampleError::ZeroWeight),
            }
        };
        bump(&mut size)?;

        let mut stack = vec![Task::Element(root)];
        let mut work = Vec::new();
        let mut items = Vec::new();
        let mut attrs: Vec<(Arc<Name>, String)> = Vec::new();
        let mut value = String::new();
        while let Some(task) = stack.pop() {
            match task {
                Task::Element(d) => {
                    let body = g.define(d).body;
                    let Pattern::Element(_, content) = g.pattern(body) else { unreachable!() };
                    work.push(Work::Node(*content));
                    while let Some(w) = work.pop() {
                        let id = match w {
                            Work::Node(id) => id,
                            Work::Repeat(id, left) => {
                                if left > 1 {
                                    work.push(Work::Repeat(id, left - 1));
                                }
                                id
                            }
                        };
                        match g.pattern(id) {
                            Pattern::Choice(a, b) => {
                                work.push(Work::Node(if self.choose_left(id, rng)? { *a } else { *b }))
                            }
                            Pattern::Group(a, b) => {
                                work.push(Work::Node(*b));
                                work.push(Work::Node(*a));
                            }
                            Pattern::OneOrMore(p) => {
                                let k = geometric(rng, self.values[p.index()]);
                                work.push(Work::Repeat(*p, k));
                            }
                            Pattern::Ref(child) => {
                                bump(&mut size)?;
                                items.push(Item::Child(*child));
                            }
                            Pattern::Attribute(_, v) => {
                                bump(&mut size)?;
                                value.clear();
                                self.attribute_value(*v, rng, emit.as_mut().map(|e| &mut e.leaf_rng), &mut value)?;
                                if emit.is_some() {
                                    let name = self.names[id.index()].clone().expect("attribute name");
                                    attrs.push((name, value.clone()));
                                }
                            }
                            Pattern::Text | Pattern::Data { .. } | Pattern::Value { .. } => items.push(Item::Leaf(id)),
                            Pattern::Empty => {}
                            Pattern::NotAllowed => return Err(SampleError::ZeroWeight),
                            Pattern::Element(..) => unreachable!("elements only occur as define bodies"),
                        }
                    }
                    if let Some(e) = emit.as_mut() {
                        for (i, (a, _)) in attrs.iter().enumerate() {
                            if attrs[..i].iter().any(|(b, _)| b == a) {
                                return Err(SampleError::DuplicateAttribute(a.to_string()));
                            }
                        }
                        let name = self.names[body.index()].clone().expect("element name");
                        e.sink.event(XmlEvent::StartElement { name, attributes: std::mem::take(&mut attrs) })?;
                    }
                    stack.push(Task::End(d));
                    stack.extend(items.drain(..).rev().map(|item| match item {
                        Item::Child(c) => Task::Element(c),
                        Item::Leaf(p) => Task::Leaf(p),
                    }));
                }
                Task::End(d) => {
                    if let Some(e) = emit.as_mut() {
                        let name = self.names[g.define(d).body.index()].clone().expect("element name");
                        e.sink.event(XmlEvent::EndElement { name })?;
                    }
                }
                Task::Leaf(p) => {
                    if let Some(e) = emit.as_mut() {
                        let text = self.leaf_value(p, &mut e.leaf_rng);
                        e.sink.event(XmlEvent::Text(text))?;
                    }
                }
            }
        }
        Ok(size)
    }

    fn leaf_value(&self, id: PatternId, leaf_rng: &mut ChaCha8Rng) -> String {
        let sampler = |name: &str| self.registry.get(name).expect("checked at construction");
        match self.grammar.pattern(id) {
            Pattern::Value { literal, .. } => literal.clone(),
            Pattern::Data { datatype, params } => sampler(datatype).sample(leaf_rng, params),
            Pattern::Text => sampler(TEXT_DATATYPE).sample(leaf_rng, &[]),
            other => unreachable!("not a leaf: {other:?}"),
        }
    }

    /// Realizes an attribute's value pattern. Structural draws always use
    /// `rng`; leaf text is only produced when `leaf_rng` is given.
    fn attribute_value<R: Rng + ?Sized>(
        &self,
        id: PatternId,
        rng: &mut R,
        mut leaf_rng: Option<&mut ChaCha8Rng>,
        out: &mut String,
    ) -> Result<(), SampleError> {
        let mut work = vec![Work::Node(id)];
        while let Some(w) = work.pop() {
            let id = match w {
                Work::Node(id) => id,
                Work::Repeat(id, left) => {
                    if left > 1 {
                        work.push(Work::Repeat(id, left - 1));
                    }
                    id
                }
            };
            match self.grammar.pattern(id) {
                Pattern::Choice(a, b) => work.push(Work::Node(if self.choose_left(id, rng)? { *a } else { *b })),
                Pattern::Group(a, b) => {
                    work.push(Work::Node(*b));
                    work.push(Work::Node(*a));
                }
                Pattern::OneOrMore(p) => {
                    let k = geometric(rng, self.values[p.index()]);
                    work.push(Work::Repeat(*p, k));
                }
                Pattern::Text | Pattern::Data { .. } | Pattern::Value { .. } => {
                    if let Some(leaf) = leaf_rng.as_deref_mut() {
                        out.push_str(&self.leaf_value(id, leaf));
                    }
                }
                Pattern::Empty => {}
                Pattern::NotAllowed => return Err(SampleError::ZeroWeight),
                other => unreachable!("not allowed in attribute values: {other:?}"),
            }
        }
        Ok(())
    }
}

/// `k ≥ 1` with `P(k = j) = (1 − p) p^(j−1)`, by inversion from one uniform.
pub fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if !(p > 0.0) {
        return 1;
    }
    if p >= 1.0 {
        return u64::MAX;
    }
    // 1 − [0, 1) is (0, 1], so the logarithm is finite.
    let u = 1.0 - rng.random::<f64>();
    let k = 1.0 + (u.ln() / p.ln()).floor();
    if k >= u64::MAX as f64 {
        u64::MAX
    } else {
        k as u64
    }
}

/// One accepted document plus how it was obtained.
#[derive(Clone, Debug)]
pub struct SampledDocument {
    pub xml: Vec<u8>,
    pub stats: AttemptStats,
}

/// Samples one document in `config.window`, seeded by `config.seed`, and
/// serializes it to `out`.
pub fn sample_in_window<W: std::io::Write>(
    grammar: &Grammar,
    oracle: &OracleTable,
    config: &SamplerConfig,
    out: W,
    xml_declaration: bool,
) -> Result<AttemptStats, SampleError> {
    config.validate()?;
    let sampler = Sampler::new(grammar, oracle, config.registry.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut writer = if xml_declaration { XmlWriter::with_declaration(out)? } else { XmlWriter::new(out) };
    let stats = sampler.sample_in_window(&mut rng, &config.window, config.max_attempts, &mut writer)?;
    writer.finish()?;
    Ok(stats)
}

/// Like [`sample_in_window`], collecting the output in memory.
pub fn sample_document(
    grammar: &Grammar,
    oracle: &OracleTable,
    config: &SamplerConfig,
) -> Result<SampledDocument, SampleError> {
    let mut xml = Vec::new();
    let stats = sample_in_window(grammar, oracle, config, &mut xml, false)?;
    Ok(SampledDocument { xml, stats })
}

/// The structural random stream used for a seed.
pub fn rng_for_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
