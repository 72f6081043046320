//! Small grammars shipped with the crate, used by tests and examples.

pub const TERNARY: &str = include_str!("../grammars/ternary.rng");
pub const BINARY: &str = include_str!("../grammars/binary.rng");
pub const SINGLE: &str = include_str!("../grammars/single.rng");
pub const ATTRIBUTES: &str = include_str!("../grammars/attributes.rng");
pub const LISTS: &str = include_str!("../grammars/lists.rng");
pub const RSS: &str = include_str!("../grammars/rss.rng");

/// Every bundled grammar with a short name.
pub const ALL: [(&str, &str); 6] = [
    ("ternary", TERNARY),
    ("binary", BINARY),
    ("single", SINGLE),
    ("attributes", ATTRIBUTES),
    ("lists", LISTS),
    ("rss", RSS),
];
