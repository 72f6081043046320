//! Leaf-value generators for `data` patterns and text.
//!
//! The combinatorial model treats every leaf as a single object; the values
//! written for it come from a [`DatatypeRegistry`] keyed by XML Schema
//! datatype name. Defaults cover the common built-in types and can be
//! overridden per name.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

/// Registry key used for `<text/>` leaves.
pub const TEXT_DATATYPE: &str = "text";

pub type Params = [(String, String)];

/// Produces one lexical value of a datatype.
pub trait LeafSampler: Send + Sync {
    fn sample(&self, rng: &mut dyn RngCore, params: &Params) -> String;
}

impl<F> LeafSampler for F
where
    F: Fn(&mut dyn RngCore, &Params) -> String + Send + Sync,
{
    fn sample(&self, rng: &mut dyn RngCore, params: &Params) -> String {
        self(rng, params)
    }
}

#[derive(Clone, Default)]
pub struct DatatypeRegistry {
    samplers: HashMap<String, Arc<dyn LeafSampler>>,
    fallback: Option<Arc<dyn LeafSampler>>,
}

impl fmt::Debug for DatatypeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.samplers.keys().collect();
        names.sort();
        f.debug_struct("DatatypeRegistry")
            .field("datatypes", &names)
            .field("fallback", &self.fallback.is_some())
            .finish()
    }
}

impl DatatypeRegistry {
    pub fn empty() -> Self {
        DatatypeRegistry::default()
    }

    /// Every datatype yields the empty string, so documents with the same
    /// structure serialize identically. The enumerator uses the same
    /// convention.
    pub fn canonical() -> Self {
        DatatypeRegistry { samplers: HashMap::new(), fallback: None }
            .with_fallback(|_: &mut dyn RngCore, _: &Params| String::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, sampler: impl LeafSampler + 'static) {
        self.samplers.insert(name.into(), Arc::new(sampler));
    }

    pub fn with(mut self, name: impl Into<String>, sampler: impl LeafSampler + 'static) -> Self {
        self.insert(name, sampler);
        self
    }

    /// Used for any name without an explicit entry.
    pub fn with_fallback(mut self, sampler: impl LeafSampler + 'static) -> Self {
        self.fallback = Some(Arc::new(sampler));
        self
    }

    /// Overrides entries of `self` with those of `other`.
    pub fn extend(&mut self, other: DatatypeRegistry) {
        self.samplers.extend(other.samplers);
        if other.fallback.is_some() {
            self.fallback = other.fallback;
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.samplers.contains_key(name) || self.fallback.is_some()
    }

    pub fn get(&self, name: &str) -> Option<&dyn LeafSampler> {
        self.samplers.get(name).or(self.fallback.as_ref()).map(|s| s.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.samplers.keys().map(String::as_str)
    }
}

fn param<'a>(params: &'a Params, name: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == name).map(|(_, v)| v.trim())
}

fn int_param(params: &Params, name: &str) -> Option<i64> {
    param(params, name).and_then(|v| v.parse().ok())
}

/// Integer in `[lo, hi]`, narrowed by facet parameters.
fn integer_in(lo: i64, hi: i64) -> impl Fn(&mut dyn RngCore, &Params) -> String {
    move |rng, params| {
        let mut min = lo;
        let mut max = hi;
        if let Some(v) = int_param(params, "minInclusive") {
            min = min.max(v);
        }
        if let Some(v) = int_param(params, "minExclusive") {
            min = min.max(v.saturating_add(1));
        }
        if let Some(v) = int_param(params, "maxInclusive") {
            max = max.min(v);
        }
        if let Some(v) = int_param(params, "maxExclusive") {
            max = max.min(v.saturating_sub(1));
        }
        if min > max {
            return min.to_string();
        }
        rng.random_range(min..=max).to_string()
    }
}

const LOWER: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const WORDS: &[&str] =
    &["lorem", "ipsum", "dolor", "sit", "amet", "tree", "node", "leaf", "random", "sample", "size", "grammar"];

fn pick<'a, T>(rng: &mut dyn RngCore, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

/// Length bounds from `length` / `minLength` / `maxLength`, defaulting to
/// `[min, max]`.
fn length_range(params: &Params, min: usize, max: usize) -> (usize, usize) {
    if let Some(n) = int_param(params, "length") {
        let n = n.max(0) as usize;
        return (n, n);
    }
    let lo = int_param(params, "minLength").map_or(min, |v| v.max(0) as usize);
    let hi = int_param(params, "maxLength").map_or(max.max(lo), |v| v.max(0) as usize);
    (lo.min(hi), hi)
}

fn word_string(rng: &mut dyn RngCore, params: &Params) -> String {
    let (lo, hi) = length_range(params, 1, 24);
    let target = rng.random_range(lo..=hi);
    let mut out = String::new();
    while out.len() < target {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(pick(rng, WORDS));
    }
    out.truncate(target);
    // Truncation may leave a trailing space, which token forbids.
    while out.ends_with(' ') {
        out.pop();
        out.push('x');
    }
    out
}

/// Free text, occasionally including characters that need escaping.
fn free_string(rng: &mut dyn RngCore, params: &Params) -> String {
    let mut s = word_string(rng, params);
    if param(params, "length").is_none() && param(params, "maxLength").is_none() && rng.random_bool(0.1) {
        s.push_str(pick(rng, &[" & ", " < ", " > ", " \"q\" ", " 'a' "]));
        s.push_str(pick(rng, WORDS));
    }
    s
}

fn ncname(rng: &mut dyn RngCore, params: &Params) -> String {
    let (lo, hi) = length_range(params, 1, 10);
    let n = rng.random_range(lo.max(1)..=hi.max(1));
    let mut s = String::with_capacity(n);
    s.push(*pick(rng, LOWER) as char);
    for _ in 1..n {
        s.push(*pick(rng, ALNUM) as char);
    }
    s
}

fn days_in_month(year: i32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        _ => 28,
    }
}

fn date(rng: &mut dyn RngCore, _: &Params) -> String {
    let year = rng.random_range(1970..=2099);
    let month = rng.random_range(1..=12);
    let day = rng.random_range(1..=days_in_month(year, month));
    format!("{year:04}-{month:02}-{day:02}")
}

fn time(rng: &mut dyn RngCore, _: &Params) -> String {
    format!("{:02}:{:02}:{:02}", rng.random_range(0..24), rng.random_range(0..60), rng.random_range(0..60))
}

fn decimal(rng: &mut dyn RngCore, params: &Params) -> String {
    let whole = integer_in(-99_999, 99_999)(rng, params);
    let frac: u32 = rng.random_range(0..1000);
    if frac == 0 {
        whole
    } else {
        format!("{whole}.{frac:03}")
    }
}

fn double(rng: &mut dyn RngCore, _: &Params) -> String {
    let mantissa: f64 = rng.random_range(-10.0..10.0);
    let exp: i32 = rng.random_range(-5..=5);
    format!("{mantissa:.6}E{exp}")
}

fn any_uri(rng: &mut dyn RngCore, params: &Params) -> String {
    let host = ncname(rng, &[]).to_lowercase();
    let path = ncname(rng, params);
    format!("https://{host}.example.org/{path}")
}

fn language(rng: &mut dyn RngCore, _: &Params) -> String {
    pick(rng, &["en", "fr", "de", "en-GB", "pt-BR", "ja"]).to_string()
}

/// Default samplers for the common XML Schema built-in datatypes plus
/// `text`.
pub fn default_datatype_samplers() -> DatatypeRegistry {
    let mut r = DatatypeRegistry::empty();
    r.insert(TEXT_DATATYPE, free_string);
    r.insert("string", free_string);
    r.insert("normalizedString", word_string);
    r.insert("token", word_string);
    r.insert("NMTOKEN", ncname);
    r.insert("Name", ncname);
    r.insert("NCName", ncname);
    r.insert("ID", ncname);
    r.insert("IDREF", ncname);
    r.insert("ENTITY", ncname);
    r.insert("QName", ncname);
    r.insert("language", language);
    r.insert("anyURI", any_uri);
    r.insert("boolean", |rng: &mut dyn RngCore, _: &Params| {
        if rng.random_bool(0.5) { "true" } else { "false" }.to_string()
    });
    r.insert("integer", integer_in(-1_000_000, 1_000_000));
    r.insert("long", integer_in(i64::MIN, i64::MAX));
    r.insert("int", integer_in(i32::MIN as i64, i32::MAX as i64));
    r.insert("short", integer_in(i16::MIN as i64, i16::MAX as i64));
    r.insert("byte", integer_in(i8::MIN as i64, i8::MAX as i64));
    r.insert("nonNegativeInteger", integer_in(0, 1_000_000));
    r.insert("positiveInteger", integer_in(1, 1_000_000));
    r.insert("nonPositiveInteger", integer_in(-1_000_000, 0));
    r.insert("negativeInteger", integer_in(-1_000_000, -1));
    r.insert("unsignedLong", integer_in(0, i64::MAX));
    r.insert("unsignedInt", integer_in(0, u32::MAX as i64));
    r.insert("unsignedShort", integer_in(0, u16::MAX as i64));
    r.insert("unsignedByte", integer_in(0, u8::MAX as i64));
    r.insert("decimal", decimal);
    r.insert("double", double);
    r.insert("float", double);
    r.insert("date", date);
    r.insert("time", time);
    r.insert("dateTime", |rng: &mut dyn RngCore, p: &Params| format!("{}T{}", date(rng, p), time(rng, p)));
    r.insert("gYear", |rng: &mut dyn RngCore, _: &Params| format!("{:04}", rng.random_range(1900..=2099)));
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draw(name: &str, seed: u64, params: &Params) -> String {
        let reg = default_datatype_samplers();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        reg.get(name).unwrap().sample(&mut rng, params)
    }

    #[test]
    fn boolean_lexical_space() {
        for seed in 0..50 {
            let v = draw("boolean", seed, &[]);
            assert!(v == "true" || v == "false");
        }
    }

    #[test]
    fn integer_is_deterministic_under_seed() {
        for seed in 0..20 {
            assert_eq!(draw("integer", seed, &[]), draw("integer", seed, &[]));
            assert!(draw("integer", seed, &[]).parse::<i64>().is_ok());
        }
    }

    #[test]
    fn integer_respects_facets() {
        let params = [("minInclusive".to_string(), "3".to_string()), ("maxExclusive".to_string(), "6".to_string())];
        for seed in 0..100 {
            let v: i64 = draw("integer", seed, &params).parse().unwrap();
            assert!((3..6).contains(&v));
        }
    }

    #[test]
    fn dates_are_real_calendar_dates() {
        for seed in 0..500 {
            let v = draw("date", seed, &[]);
            assert_eq!(v.len(), 10);
            assert!(chrono::NaiveDate::parse_from_str(&v, "%Y-%m-%d").is_ok(), "{v}");
        }
    }

    #[test]
    fn string_lengths() {
        let params = [("length".to_string(), "7".to_string())];
        for seed in 0..50 {
            assert_eq!(draw("token", seed, &params).chars().count(), 7);
            let tok = draw("token", seed, &[]);
            assert!(!tok.starts_with(' ') && !tok.ends_with(' '));
        }
    }

    #[test]
    fn required_types_present_and_overridable() {
        let mut reg = default_datatype_samplers();
        for name in ["string", "token", "integer", "decimal", "boolean", "date", "anyURI"] {
            assert!(reg.contains(name), "{name}");
        }
        for seed in 0..20 {
            assert!(draw("decimal", seed, &[]).parse::<f64>().is_ok());
            assert!(draw("anyURI", seed, &[]).starts_with("https://"));
        }
        reg.insert("integer", |_: &mut dyn RngCore, _: &Params| "42".to_string());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(reg.get("integer").unwrap().sample(&mut rng, &[]), "42");
        assert!(reg.get("nope").is_none());
    }
}
