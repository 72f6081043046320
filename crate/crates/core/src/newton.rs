//! Numerical oracle: evaluates every generating function of a system at a
//! parameter `x` by Newton iteration from zero, and brackets the radius of
//! convergence by bisection on whether that iteration converges.
//!
//! Started at `Y = 0`, the iteration `Y ← Y + (I − J)^{-1}(Φ(x, Y) − Y)`
//! increases monotonically to the combinatorial solution whenever `x` is
//! below the singularity. Above it there is no nonnegative fixed point and
//! the iterates either blow up, stop increasing, or hit a singular
//! Jacobian; all three are reported as divergence.

use std::fmt::Write as _;

use thiserror::Error;

use crate::system::{ClassId, GfSystem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    /// Both the update and the residual must fall below this, relative to
    /// `max(1, |y_i|)`.
    pub tolerance: f64,
    pub divergence_ceiling: f64,
    pub max_iterations: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { tolerance: 1e-12, divergence_ceiling: 1e8, max_iterations: 500 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub newton: NewtonSettings,
    /// Stop bisecting once the bracket is at most this wide.
    pub dichotomy_tolerance: f64,
    /// Upper end of the bisection interval.
    pub x_max: f64,
    /// `Auto` evaluates at `ρ_lo · (1 − backoff)`.
    pub backoff: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { newton: NewtonSettings::default(), dichotomy_tolerance: 1e-10, x_max: 1.0, backoff: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceReason {
    Ceiling,
    NonFinite,
    Singular,
    NonMonotone,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SolveError {
    #[error("Newton iteration diverged at x = {x} ({reason:?} after {iterations} iterations)")]
    Diverged { x: f64, reason: DivergenceReason, iterations: usize },
    #[error("Newton iteration diverged at x = {x}; the singularity lies in [{lo}, {hi}], try x ≤ {lo}")]
    AboveSingularity { x: f64, lo: f64, hi: f64 },
    #[error("system is ill-founded: Newton iteration does not converge at x = 0")]
    IllFounded,
    #[error("no finite singularity found up to x = {x_max}; pass an explicit x")]
    NoFiniteSingularity { x_max: f64 },
    #[error("invalid parameter x = {0}")]
    InvalidParameter(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonSolution {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `(I − J) Δ = F` in place; `a` is row-major `m × m`. Returns
/// `None` when a pivot vanishes relative to the matrix scale.
pub(crate) fn gauss_solve(a: &mut [f64], b: &mut [f64], m: usize) -> Option<()> {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let eps = scale * 1e-14;
    for col in 0..m {
        let (pivot_row, pivot) =
            (col..m).map(|r| (r, a[r * m + col].abs())).max_by(|x, y| x.1.total_cmp(&y.1)).expect("non-empty range");
        if !(pivot > eps) {
            return None;
        }
        if pivot_row != col {
            for k in 0..m {
                a.swap(col * m + k, pivot_row * m + k);
            }
            b.swap(col, pivot_row);
        }
        let p = a[col * m + col];
        for r in col + 1..m {
            let f = a[r * m + col] / p;
            if f == 0.0 {
                continue;
            }
            for k in col..m {
                a[r * m + k] -= f * a[col * m + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..m).rev() {
        let mut s = b[col];
        for k in col + 1..m {
            s -= a[col * m + k] * b[k];
        }
        b[col] = s / a[col * m + col];
    }
    Some(())
}

/// Evaluates all classes of `system` at `x`.
pub fn newton_evaluate(system: &GfSystem, x: f64, settings: &NewtonSettings) -> Result<NewtonSolution, SolveError> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(SolveError::InvalidParameter(x));
    }
    let m = system.len();
    let mut y = vec![0.0; m];
    let diverged = |reason, iterations| SolveError::Diverged { x, reason, iterations };
    for it in 1..=settings.max_iterations {
        let phi = system.evaluate(x, &y);
        let mut delta: Vec<f64> = phi.iter().zip(&y).map(|(p, v)| p - v).collect();
        let mut a = system.jacobian(x, &y);
        for i in 0..m {
            for j in 0..m {
                let v = &mut a[i * m + j];
                *v = if i == j { 1.0 - *v } else { -*v };
            }
        }
        if gauss_solve(&mut a, &mut delta, m).is_none() {
            return Err(diverged(DivergenceReason::Singular, it));
        }
        let mut max_step = 0.0f64;
        for i in 0..m {
            let scale = y[i].abs().max(1.0);
            if !delta[i].is_finite() {
                return Err(diverged(DivergenceReason::NonFinite, it));
            }
            if delta[i] < -1e-9 * scale {
                return Err(diverged(DivergenceReason::NonMonotone, it));
            }
            y[i] += delta[i];
            if y[i] > settings.divergence_ceiling {
                return Err(diverged(DivergenceReason::Ceiling, it));
            }
            max_step = max_step.max(delta[i].abs() / scale);
        }
        if max_step < settings.tolerance {
            let residual = residual(system, x, &y);
            let scale = y.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            if residual < settings.tolerance * scale {
                for v in &mut y {
                    // Rounding can leave -0.0 or a few ulps below zero.
                    *v = v.max(0.0);
                }
                return Ok(NewtonSolution { values: y, iterations: it, residual });
            }
        }
    }
    Err(diverged(DivergenceReason::IterationCap, settings.max_iterations))
}

fn residual(system: &GfSystem, x: f64, y: &[f64]) -> f64 {
    system.evaluate(x, y).iter().zip(y).fold(0.0f64, |r, (p, v)| r.max((p - v).abs()))
}

/// A bracket on the radius of convergence: Newton converges at `lo` and
/// diverges at `hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
}

impl Bracket {
    /// The safe estimate ρ̂ (the convergent end).
    pub fn estimate(&self) -> f64 {
        self.lo
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Brackets the singularity of `system` by bisection over `[0, x_max]`.
pub fn estimate_singularity(system: &GfSystem, options: &SolveOptions) -> Result<Bracket, SolveError> {
    let converges = |x: f64| newton_evaluate(system, x, &options.newton).is_ok();
    if !converges(0.0) {
        return Err(SolveError::IllFounded);
    }
    if converges(options.x_max) {
        return Err(SolveError::NoFiniteSingularity { x_max: options.x_max });
    }
    let (mut lo, mut hi) = (0.0, options.x_max);
    while hi - lo > options.dichotomy_tolerance {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if converges(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Bracket { lo, hi })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Parameter {
    Auto,
    Explicit(f64),
}

/// A solved snapshot of the generating functions at one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleTable {
    pub x: f64,
    /// Per class, indexed like the system's classes.
    pub values: Vec<f64>,
    pub class_names: Vec<String>,
    /// `None` when the system has no finite singularity.
    pub bracket: Option<Bracket>,
    pub iterations: usize,
    pub residual: f64,
    pub system_digest: String,
}

pub const ORACLE_FORMAT_HEADER: &str = "xmlboltz-oracle 1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleFormatError {
    #[error("oracle file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("oracle was solved for system {found}, but the system digest is {expected}; re-run solve")]
    DigestMismatch { expected: String, found: String },
}

impl OracleTable {
    pub fn value(&self, c: ClassId) -> f64 {
        self.values[c.index()]
    }

    pub fn rho_estimate(&self) -> Option<f64> {
        self.bracket.map(|b| b.estimate())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{ORACLE_FORMAT_HEADER}");
        let _ = writeln!(out, "system-digest {}", self.system_digest);
        let _ = writeln!(out, "x {:.17e}", self.x);
        match self.bracket {
            Some(b) => {
                let _ = writeln!(out, "rho-lo {:.17e}", b.lo);
                let _ = writeln!(out, "rho-hi {:.17e}", b.hi);
            }
            None => {
                out.push_str("rho-lo inf\nrho-hi inf\n");
            }
        }
        let _ = writeln!(out, "iterations {}", self.iterations);
        let _ = writeln!(out, "residual {:.17e}", self.residual);
        let _ = writeln!(out, "classes {}", self.values.len());
        for (name, v) in self.class_names.iter().zip(&self.values) {
            let _ = writeln!(out, "{name} {v:.17e}");
        }
        out
    }

    /// Parses an oracle file and checks it against `system`.
    pub fn parse_text(text: &str, system: &GfSystem) -> Result<OracleTable, OracleFormatError> {
        let table = Self::parse_unchecked(text)?;
        let expected = system.digest();
        if table.system_digest != expected {
            return Err(OracleFormatError::DigestMismatch { expected, found: table.system_digest });
        }
        let names: Vec<&str> = system.classes().iter().map(|c| c.name.as_str()).collect();
        if table.class_names.iter().map(String::as_str).ne(names.iter().copied()) {
            return Err(OracleFormatError::Syntax { line: 0, message: "class list does not match the system".into() });
        }
        Ok(table)
    }

    /// Parses an oracle file without checking which system it belongs to.
    pub fn parse_unchecked(text: &str) -> Result<OracleTable, OracleFormatError> {
        let err = |line: usize, message: String| OracleFormatError::Syntax { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let mut field = |key: &str| -> Result<(usize, String), OracleFormatError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, format!("missing `{key}`")))?;
            let v = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| err(n, format!("expected `{key} ...`")))?;
            Ok((n, v.trim().to_string()))
        };
        let float = |(n, v): (usize, String)| -> Result<f64, OracleFormatError> {
            v.parse::<f64>().map_err(|_| err(n, format!("bad number `{v}`")))
        };

        let (n, version) = field("xmlboltz-oracle")?;
        if version != "1" {
            return Err(err(n, format!("unsupported oracle version `{version}`")));
        }
        let (_, system_digest) = field("system-digest")?;
        let x = float(field("x")?)?;
        let lo = float(field("rho-lo")?)?;
        let hi = float(field("rho-hi")?)?;
        let bracket = if lo.is_finite() && hi.is_finite() { Some(Bracket { lo, hi }) } else { None };
        let (n, it) = field("iterations")?;
        let iterations = it.parse().map_err(|_| err(n, "bad iteration count".into()))?;
        let residual = float(field("residual")?)?;
        let (n, count) = field("classes")?;
        let count: usize = count.parse().map_err(|_| err(n, "bad class count".into()))?;
        let mut class_names = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = lines.next().ok_or_else(|| err(0, "missing class value".into()))?;
            let (name, v) = l.rsplit_once(' ').ok_or_else(|| err(n, "expected `<class> <value>`".into()))?;
            class_names.push(name.trim().to_string());
            values.push(v.parse::<f64>().map_err(|_| err(n, format!("bad value `{v}`")))?);
        }
        Ok(OracleTable { x, values, class_names, bracket, iterations, residual, system_digest })
    }
}

/// Solves `system` at an explicit parameter or, with [`Parameter::Auto`],
/// just below the estimated singularity.
pub fn solve(system: &GfSystem, parameter: Parameter, options: &SolveOptions) -> Result<OracleTable, SolveError> {
    let (x, bracket) = match parameter {
        Parameter::Auto => {
            let bracket = estimate_singularity(system, options)?;
            (bracket.lo * (1.0 - options.backoff), Some(bracket))
        }
        Parameter::Explicit(x) => {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(SolveError::InvalidParameter(x));
            }
            let bracket = match estimate_singularity(system, options) {
                Ok(b) => Some(b),
                Err(SolveError::NoFiniteSingularity { .. }) => None,
                Err(e) => return Err(e),
            };
            (x, bracket)
        }
    };
    let solution = newton_evaluate(system, x, &options.newton).map_err(|e| match (e, bracket) {
        (SolveError::Diverged { .. }, Some(b)) => SolveError::AboveSingularity { x, lo: b.lo, hi: b.hi },
        (e, _) => e,
    })?;
    Ok(OracleTable {
        x,
        values: solution.values,
        class_names: system.classes().iter().map(|c| c.name.clone()).collect(),
        bracket,
        iterations: solution.iterations,
        residual: solution.residual,
        system_digest: system.digest(),
    })
}
