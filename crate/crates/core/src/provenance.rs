//! Version and configuration fingerprint stamped on every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Provenance {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn for_config<T: Serialize>(config: &T, seed: u64) -> Result<Self> {
        Ok(Self::new(config_hash(config)?, seed))
    }

    pub fn verify_against<T: Serialize>(&self, config: &T) -> Result<()> {
        let expected = config_hash(config)?;
        if expected != self.config_hash {
            return Err(Error::Provenance(format!(
                "artifact was produced with config {} but the given config hashes to {}",
                self.config_hash, expected
            )));
        }
        Ok(())
    }
}

/// SHA-256 of the config's canonical JSON (object keys sorted).
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let canonical = serde_json::to_vec(&value)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Reads the `provenance` block of any JSON artifact; absence is an error.
pub fn read_provenance(json: &str) -> Result<Provenance> {
    #[derive(Deserialize)]
    struct WithProvenance {
        provenance: Provenance,
    }
    let mut de = serde_json::Deserializer::from_str(json);
    de.disable_recursion_limit();
    let w = WithProvenance::deserialize(&mut de)?;
    Ok(w.provenance)
}
