//! Polynomial generating-function systems `y_i = Φ_i(x, y_1..y_m)`.
//!
//! [`compile`] maps a simplified grammar onto such a system. Size is the
//! number of elements plus the number of attributes, so elements and
//! attributes carry a factor `x`; text and data leaves are the constant 1.
//! Only element definitions and `oneOrMore` nodes get a named class; every
//! other construct is flattened into its parent's polynomial.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ast::{DefineId, Grammar, Pattern, PatternId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassId(pub(crate) u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// `coeff · x^x_exp · Π y_c^e` over `classes = [(c, e)]`, sorted by class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial {
    pub coeff: u64,
    pub x_exp: u32,
    pub classes: Vec<(ClassId, u32)>,
}

impl Monomial {
    pub fn constant(coeff: u64) -> Self {
        Monomial { coeff, x_exp: 0, classes: Vec::new() }
    }

    pub fn degree(&self) -> u32 {
        self.classes.iter().map(|(_, e)| e).sum()
    }

    fn eval(&self, x: f64, y: &[f64]) -> f64 {
        let mut v = self.coeff as f64 * x.powi(self.x_exp as i32);
        for &(c, e) in &self.classes {
            v *= y[c.index()].powi(e as i32);
        }
        v
    }
}

/// A sum of monomials, kept merged and sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Polynomial {
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn one() -> Self {
        Polynomial { terms: vec![Monomial::constant(1)] }
    }

    pub fn x() -> Self {
        Polynomial { terms: vec![Monomial { coeff: 1, x_exp: 1, classes: Vec::new() }] }
    }

    pub fn class(c: ClassId) -> Self {
        Polynomial { terms: vec![Monomial { coeff: 1, x_exp: 0, classes: vec![(c, 1)] }] }
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Monomial>) -> Result<Self, CompileError> {
        normalize(terms.into_iter().map(|m| ((m.x_exp, m.classes), m.coeff)))
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the monomial free of `x` and of every class.
    pub fn constant_term(&self) -> u64 {
        self.terms.iter().find(|m| m.x_exp == 0 && m.classes.is_empty()).map_or(0, |m| m.coeff)
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, CompileError> {
        let all = self.terms.iter().chain(&other.terms).cloned();
        normalize(all.map(|m| ((m.x_exp, m.classes), m.coeff)))
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, CompileError> {
        let mut products = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let coeff = a.coeff.checked_mul(b.coeff).ok_or(CompileError::CoefficientOverflow)?;
                let x_exp = a.x_exp.checked_add(b.x_exp).ok_or(CompileError::CoefficientOverflow)?;
                let mut classes: BTreeMap<ClassId, u32> = a.classes.iter().copied().collect();
                for &(c, e) in &b.classes {
                    *classes.entry(c).or_insert(0) += e;
                }
                products.push(((x_exp, classes.into_iter().collect()), coeff));
            }
        }
        normalize(products)
    }

    pub fn eval(&self, x: f64, y: &[f64]) -> f64 {
        self.terms.iter().map(|m| m.eval(x, y)).sum()
    }
}

type TermKey = (u32, Vec<(ClassId, u32)>);

fn normalize(terms: impl IntoIterator<Item = (TermKey, u64)>) -> Result<Polynomial, CompileError> {
    let mut merged: BTreeMap<TermKey, u64> = BTreeMap::new();
    for (key, coeff) in terms {
        if coeff == 0 {
            continue;
        }
        let slot = merged.entry(key).or_insert(0);
        *slot = slot.checked_add(coeff).ok_or(CompileError::CoefficientOverflow)?;
    }
    Ok(Polynomial {
        terms: merged.into_iter().map(|((x_exp, classes), coeff)| Monomial { coeff, x_exp, classes }).collect(),
    })
}

/// The grammar construct a class stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassOrigin {
    Element(DefineId),
    Sequence(PatternId),
    Start,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassInfo {
    pub name: String,
    /// Unknown for systems read back from a file.
    pub origin: Option<ClassOrigin>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GfSystem {
    classes: Vec<ClassInfo>,
    equations: Vec<Polynomial>,
    start: ClassId,
    grammar_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SystemStats {
    pub equations: usize,
    pub monomials: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("oneOrMore over a pattern that matches size 0 (in `{context}`): infinitely many documents of equal size")]
    SequenceOverEpsilon { context: String },
    #[error("the start pattern generates no document")]
    EmptyStart,
    #[error("class `{0}` can recurse without consuming size")]
    IllFounded(String),
    #[error("monomial coefficient overflow")]
    CoefficientOverflow,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("system file line {line}: {message}")]
pub struct SystemFormatError {
    pub line: usize,
    pub message: String,
}

pub const SYSTEM_FORMAT_HEADER: &str = "xmlboltz-system 1";

impl GfSystem {
    /// Builds a system from raw equations, checking the structural
    /// invariants. Classes are referred to by position.
    pub fn new(
        classes: Vec<ClassInfo>,
        equations: Vec<Polynomial>,
        start: ClassId,
        grammar_digest: String,
    ) -> Result<Self, CompileError> {
        assert_eq!(classes.len(), equations.len(), "one equation per class");
        assert!(start.index() < classes.len());
        for eq in &equations {
            for m in eq.terms() {
                for (c, _) in &m.classes {
                    assert!(c.index() < classes.len(), "undeclared class in equation");
                }
            }
        }
        let sys = GfSystem { classes, equations, start, grammar_digest };
        sys.check_well_founded()?;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> &ClassInfo {
        &self.classes[id.index()]
    }

    pub fn class_ids(&self) -> impl Iterator<Item = ClassId> {
        (0..self.classes.len() as u32).map(ClassId)
    }

    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().position(|c| c.name == name).map(|i| ClassId(i as u32))
    }

    pub fn equation(&self, id: ClassId) -> &Polynomial {
        &self.equations[id.index()]
    }

    pub fn equations(&self) -> &[Polynomial] {
        &self.equations
    }

    pub fn start(&self) -> ClassId {
        self.start
    }

    pub fn grammar_digest(&self) -> &str {
        &self.grammar_digest
    }

    pub fn stats(&self) -> SystemStats {
        SystemStats { equations: self.equations.len(), monomials: self.equations.iter().map(|p| p.terms().len()).sum() }
    }

    /// True when some class depends on itself, i.e. the generating
    /// functions are not all polynomials in `x`.
    pub fn is_recursive(&self) -> bool {
        let m = self.len();
        let mut state = vec![0u8; m];
        fn visit(sys: &GfSystem, c: usize, state: &mut [u8]) -> bool {
            state[c] = 1;
            for mono in sys.equations[c].terms() {
                for &(d, _) in &mono.classes {
                    let seen = state[d.index()];
                    if seen == 1 || (seen == 0 && visit(sys, d.index(), state)) {
                        return true;
                    }
                }
            }
            state[c] = 2;
            false
        }
        (0..m).any(|c| state[c] == 0 && visit(self, c, &mut state))
    }

    /// `Φ(x, y)` for every class.
    pub fn evaluate(&self, x: f64, y: &[f64]) -> Vec<f64> {
        self.equations.iter().map(|p| p.eval(x, y)).collect()
    }

    /// Row-major Jacobian `∂Φ_i/∂y_j`.
    pub fn jacobian(&self, x: f64, y: &[f64]) -> Vec<f64> {
        let m = self.len();
        let mut jac = vec![0.0; m * m];
        for (i, eq) in self.equations.iter().enumerate() {
            for mono in eq.terms() {
                let base = mono.coeff as f64 * x.powi(mono.x_exp as i32);
                for (k, &(c, e)) in mono.classes.iter().enumerate() {
                    let mut v = base * e as f64 * y[c.index()].powi(e as i32 - 1);
                    for (l, &(d, f)) in mono.classes.iter().enumerate() {
                        if l != k {
                            v *= y[d.index()].powi(f as i32);
                        }
                    }
                    jac[i * m + c.index()] += v;
                }
            }
        }
        jac
    }

    /// Rejects systems in which a class can reach itself through monomials
    /// that consume no size (`x` exponent 0).
    /// Classes containing an object of size 0.
    fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.len()];
        loop {
            let mut changed = false;
            for (c, eq) in self.equations.iter().enumerate() {
                if !nullable[c]
                    && eq
                        .terms()
                        .iter()
                        .any(|mono| mono.x_exp == 0 && mono.classes.iter().all(|(d, _)| nullable[d.index()]))
                {
                    nullable[c] = true;
                    changed = true;
                }
            }
            if !changed {
                return nullable;
            }
        }
    }

    /// Rejects systems with infinitely many objects of some size: a cycle
    /// of dependencies that can each be followed at size 0, i.e. through a
    /// monomial with no `x` whose other factors all contain size-0 objects.
    fn check_well_founded(&self) -> Result<(), CompileError> {
        let m = self.len();
        let nullable = self.nullable();
        let edges: Vec<Vec<usize>> = self
            .equations
            .iter()
            .map(|eq| {
                let mut out = Vec::new();
                for mono in eq.terms().iter().filter(|mono| mono.x_exp == 0) {
                    for &(c, e) in &mono.classes {
                        let others_nullable =
                            mono.classes.iter().all(|&(d, f)| nullable[d.index()] || (d == c && f == 1 && e == 1));
                        if others_nullable {
                            out.push(c.index());
                        }
                    }
                }
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
        let mut state = vec![0u8; m];
        for root in 0..m {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some((c, i)) = stack.pop() {
                if let Some(&d) = edges[c].get(i) {
                    stack.push((c, i + 1));
                    match state[d] {
                        1 => return Err(CompileError::IllFounded(self.classes[d].name.clone())),
                        0 => {
                            state[d] = 1;
                            stack.push((d, 0));
                        }
                        _ => {}
                    }
                } else {
                    state[c] = 2;
                }
            }
        }
        Ok(())
    }

    /// Which classes generate at least one object.
    pub fn productive(&self) -> Vec<bool> {
        let mut prod = vec![false; self.len()];
        loop {
            let mut changed = false;
            for (i, eq) in self.equations.iter().enumerate() {
                if !prod[i] && eq.terms().iter().any(|m| m.classes.iter().all(|(c, _)| prod[c.index()])) {
                    prod[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return prod;
            }
        }
    }

    /// Canonical text form; see [`GfSystem::parse_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{SYSTEM_FORMAT_HEADER}");
        let _ = writeln!(out, "grammar-digest {}", self.grammar_digest);
        let _ = writeln!(out, "classes {}", self.len());
        let _ = writeln!(out, "start {}", self.classes[self.start.index()].name);
        for (info, eq) in self.classes.iter().zip(&self.equations) {
            let _ = write!(out, "eq {} =", info.name);
            for (k, m) in eq.terms().iter().enumerate() {
                if k > 0 {
                    out.push_str(" +");
                }
                let _ = write!(out, " {} {} (", m.coeff, m.x_exp);
                for (j, (c, e)) in m.classes.iter().enumerate() {
                    if j > 0 {
                        out.push(' ');
                    }
                    let _ = write!(out, "{}:{}", self.classes[c.index()].name, e);
                }
                out.push(')');
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of [`GfSystem::to_text`].
    pub fn digest(&self) -> String {
        crate::digest_hex(self.to_text().as_bytes())
    }

    pub fn parse_text(text: &str) -> Result<GfSystem, SystemFormatError> {
        let err = |line: usize, message: String| SystemFormatError { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| err(0, format!("missing {what}")));

        let (n, header) = next("header")?;
        if header != SYSTEM_FORMAT_HEADER {
            return Err(err(n, format!("expected `{SYSTEM_FORMAT_HEADER}`")));
        }
        let (n, l) = next("grammar digest")?;
        let digest = l
            .strip_prefix("grammar-digest ")
            .ok_or_else(|| err(n, "expected `grammar-digest <hex>`".into()))?
            .trim()
            .to_string();
        let (n, l) = next("class count")?;
        let count: usize = l
            .strip_prefix("classes ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(n, "expected `classes <count>`".into()))?;
        let (start_line, l) = next("start class")?;
        let start_name = l
            .strip_prefix("start ")
            .ok_or_else(|| err(start_line, "expected `start <class>`".into()))?
            .trim()
            .to_string();

        let mut raw_eqs = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("equation")?;
            let rest = l.strip_prefix("eq ").ok_or_else(|| err(n, "expected `eq <class> = ...`".into()))?;
            let (name, rhs) = rest.split_once('=').ok_or_else(|| err(n, "missing `=`".into()))?;
            raw_eqs.push((n, name.trim().to_string(), rhs.trim().to_string()));
        }
        if let Some((n, _)) = lines.next() {
            return Err(err(n, "trailing content after equations".into()));
        }

        let index: BTreeMap<&str, ClassId> =
            raw_eqs.iter().enumerate().map(|(i, (_, name, _))| (name.as_str(), ClassId(i as u32))).collect();
        if index.len() != raw_eqs.len() {
            return Err(err(0, "duplicate class name".into()));
        }
        let start = *index
            .get(start_name.as_str())
            .ok_or_else(|| err(start_line, format!("unknown start class `{start_name}`")))?;

        let mut equations = Vec::with_capacity(count);
        for (n, _, rhs) in &raw_eqs {
            let mut terms = Vec::new();
            if !rhs.is_empty() {
                for term in rhs.split('+') {
                    let term = term.trim();
                    let open = term.find('(').ok_or_else(|| err(*n, format!("bad monomial `{term}`")))?;
                    let close = term.rfind(')').ok_or_else(|| err(*n, format!("bad monomial `{term}`")))?;
                    let mut nums = term[..open].split_whitespace();
                    let parse_num = |s: Option<&str>| s.and_then(|s| s.parse::<u64>().ok());
                    let coeff =
                        parse_num(nums.next()).ok_or_else(|| err(*n, format!("bad coefficient in `{term}`")))?;
                    let x_exp = parse_num(nums.next())
                        .and_then(|v| u32::try_from(v).ok())
                        .ok_or_else(|| err(*n, format!("bad x exponent in `{term}`")))?;
                    let mut classes = Vec::new();
                    for factor in term[open + 1..close].split_whitespace() {
                        let (cname, exp) =
                            factor.rsplit_once(':').ok_or_else(|| err(*n, format!("bad factor `{factor}`")))?;
                        let c = *index.get(cname).ok_or_else(|| err(*n, format!("unknown class `{cname}`")))?;
                        let e: u32 = exp.parse().map_err(|_| err(*n, format!("bad exponent `{factor}`")))?;
                        classes.push((c, e));
                    }
                    classes.sort();
                    terms.push(Monomial { coeff, x_exp, classes });
                }
            }
            equations.push(Polynomial::from_terms(terms).map_err(|e| err(*n, e.to_string()))?);
        }
        let classes = raw_eqs.into_iter().map(|(_, name, _)| ClassInfo { name, origin: None }).collect();
        GfSystem::new(classes, equations, start, digest).map_err(|e| err(0, e.to_string()))
    }
}

/// Translates a simplified grammar into its generating-function system.
pub fn compile(grammar: &Grammar) -> Result<GfSystem, CompileError> {
    let mut c = Compiler { grammar, classes: Vec::new(), equations: Vec::new(), context: String::new() };
    for d in grammar.define_ids() {
        c.classes.push(ClassInfo { name: grammar.define(d).name.clone(), origin: Some(ClassOrigin::Element(d)) });
        c.equations.push(Polynomial::zero());
    }
    for d in grammar.define_ids() {
        c.context = grammar.define(d).name.clone();
        let (_, content) = grammar.element_of(d);
        let eq = Polynomial::x().mul(&c.translate(content)?)?;
        c.equations[d.index()] = eq;
    }
    let start = match grammar.pattern(grammar.start()) {
        Pattern::Ref(d) => ClassId(d.0),
        _ => {
            c.context = "start".into();
            let eq = c.translate(grammar.start())?;
            c.classes.push(ClassInfo { name: "@start".into(), origin: Some(ClassOrigin::Start) });
            c.equations.push(eq);
            ClassId(c.classes.len() as u32 - 1)
        }
    };
    let sys = GfSystem::new(c.classes, c.equations, start, grammar.source().digest.clone())?;
    if !sys.productive()[start.index()] {
        return Err(CompileError::EmptyStart);
    }
    Ok(sys)
}

struct Compiler<'g> {
    grammar: &'g Grammar,
    classes: Vec<ClassInfo>,
    equations: Vec<Polynomial>,
    context: String,
}

impl Compiler<'_> {
    fn translate(&mut self, id: PatternId) -> Result<Polynomial, CompileError> {
        match self.grammar.pattern(id) {
            Pattern::Choice(a, b) => self.translate(*a)?.add(&self.translate(*b)?),
            Pattern::Group(a, b) => self.translate(*a)?.mul(&self.translate(*b)?),
            Pattern::OneOrMore(p) => {
                let body = self.translate(*p)?;
                if body.constant_term() != 0 {
                    return Err(CompileError::SequenceOverEpsilon { context: self.context.clone() });
                }
                let class = ClassId(self.classes.len() as u32);
                self.classes.push(ClassInfo {
                    name: format!("@seq{}", self.classes.len()),
                    origin: Some(ClassOrigin::Sequence(id)),
                });
                // s = p + p·s
                let eq = body.add(&body.mul(&Polynomial::class(class))?)?;
                self.equations.push(eq);
                Ok(Polynomial::class(class))
            }
            Pattern::Ref(d) => Ok(Polynomial::class(ClassId(d.0))),
            Pattern::Attribute(_, value) => Polynomial::x().mul(&self.translate(*value)?),
            Pattern::Element(..) => unreachable!("elements only occur as define bodies"),
            Pattern::Text | Pattern::Empty | Pattern::Data { .. } | Pattern::Value { .. } => Ok(Polynomial::one()),
            Pattern::NotAllowed => Ok(Polynomial::zero()),
        }
    }
}
