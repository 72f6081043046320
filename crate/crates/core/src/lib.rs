//! Uniform random generation of XML documents from RELAX NG grammars.
//!
//! The pipeline has four stages:
//!
//! 1. [`parse_grammar`] reads a RELAX NG grammar (XML syntax) into a
//!    simplified [`Grammar`];
//! 2. [`compile`] turns it into a polynomial system of generating-function
//!    equations ([`GfSystem`]), one class per element definition and per
//!    repetition;
//! 3. [`solve`] evaluates the system numerically at a parameter `x` below
//!    the radius of convergence, which it brackets by bisection;
//! 4. a [`Sampler`] draws documents with probability proportional to
//!    `x^size` and keeps the first whose size falls in a window. Within one
//!    size every document is equally likely.
//!
//! Size counts elements plus attributes.
//!
//! ```
//! use xmlboltz::{bundled, compile, parse_grammar, sample_document, solve};
//! use xmlboltz::{Parameter, SamplerConfig, SizeWindow, SolveOptions};
//!
//! let grammar = parse_grammar(bundled::TERNARY.as_bytes()).unwrap();
//! let system = compile(&grammar).unwrap();
//! let oracle = solve(&system, Parameter::Auto, &SolveOptions::default()).unwrap();
//! let mut config = SamplerConfig::new(SizeWindow::new(100, 0.1).unwrap());
//! config.seed = 7;
//! let doc = sample_document(&grammar, &oracle, &config).unwrap();
//! assert!((90..=110).contains(&doc.stats.size));
//! ```

pub mod ast;
pub mod bundled;
pub mod counting;
pub mod datatypes;
pub mod enumerate;
pub mod newton;
pub mod parse;
pub mod sampler;
pub mod system;
pub mod validate;
pub mod xml;

/// Hex SHA-256 of `bytes`, the digest used throughout the artifact chain.
pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

pub use ast::{DefineId, Grammar, Name, Pattern, PatternId};
pub use counting::{count_coefficients, CountingTable};
pub use datatypes::{default_datatype_samplers, DatatypeRegistry, LeafSampler};
pub use enumerate::{enumerate_documents, EnumerateError};
pub use newton::{
    estimate_singularity, newton_evaluate, solve, Bracket, NewtonSettings, OracleTable, Parameter, SolveError,
    SolveOptions,
};
pub use parse::{parse_grammar, ParseError, ParseErrorKind};
pub use sampler::{
    sample_document, sample_in_window, AttemptStats, SampleError, SampledDocument, Sampler, SamplerConfig, SizeWindow,
};
pub use system::{compile, ClassId, CompileError, GfSystem};
pub use validate::{validate_document, ValidationError};
pub use xml::{EventSink, SerializeError, XmlEvent, XmlWriter};
