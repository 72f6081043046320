//! JSON record of the artifacts of one pipeline run and their digests.
//!
//! The system file stores the digest of its grammar and the oracle file the
//! digest of its system, so each artifact can be checked against its input.
//! The manifest adds paths and the digest of the oracle file itself.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineManifest {
    pub tool_version: String,
    pub grammar: Artifact,
    pub system: Artifact,
    pub oracle: Option<Artifact>,
}

impl PipelineManifest {
    pub fn new(grammar: &Path, grammar_digest: &str, system: &Path, system_digest: &str) -> Self {
        PipelineManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            grammar: Artifact { path: grammar.display().to_string(), digest: grammar_digest.to_string() },
            system: Artifact { path: system.display().to_string(), digest: system_digest.to_string() },
            oracle: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<(), String> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialize");
        fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Records the oracle solved from the system with `system_digest`.
    pub fn set_oracle(&mut self, system_digest: &str, oracle: &Path, oracle_digest: &str) -> Result<(), String> {
        if system_digest != self.system.digest {
            return Err(format!(
                "manifest lists system {} but the solved system is {system_digest}; re-run compile",
                self.system.digest
            ));
        }
        self.oracle = Some(Artifact { path: oracle.display().to_string(), digest: oracle_digest.to_string() });
        Ok(())
    }

    /// Checks that the grammar and oracle are the ones this manifest lists.
    pub fn check(&self, grammar_digest: &str, oracle_digest: &str) -> Result<(), String> {
        if grammar_digest != self.grammar.digest {
            return Err(format!("grammar changed since {} was compiled; re-run compile and solve", self.system.path));
        }
        match &self.oracle {
            Some(o) if o.digest == oracle_digest => Ok(()),
            Some(o) => Err(format!("oracle file differs from {}; re-run solve", o.path)),
            None => Err("manifest has no oracle; run solve with --manifest".into()),
        }
    }
}
