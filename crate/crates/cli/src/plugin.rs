//! Datatype overrides read from a TOML value table:
//!
//! ```toml
//! [datatypes]
//! token = ["red", "green", "blue"]
//! integer = ["1", "2", "3"]
//! ```
//!
//! Each listed datatype draws uniformly from its values.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::Deserialize;
use xmlboltz::datatypes::Params;
use xmlboltz::DatatypeRegistry;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PluginFile {
    datatypes: BTreeMap<String, Vec<String>>,
}

pub fn load(text: &str) -> Result<DatatypeRegistry, String> {
    let file: PluginFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let mut registry = DatatypeRegistry::empty();
    for (name, values) in file.datatypes {
        if values.is_empty() {
            return Err(format!("datatype `{name}` has no values"));
        }
        registry
            .insert(name, move |rng: &mut dyn RngCore, _: &Params| values[rng.random_range(0..values.len())].clone());
    }
    Ok(registry)
}
