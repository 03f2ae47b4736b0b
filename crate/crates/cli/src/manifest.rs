//! Run manifest: per-stage cache keys, artifact hashes and record counts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&litforge_core::corpus::to_canonical_json(value))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    /// Input files relative to the work directory (or absolute), by content hash.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
    pub seed: u64,
    pub wall_ms: u64,
    pub cache_hit: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load(work: &Path) -> anyhow::Result<Option<Self>> {
        let p = work.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&p)?;
        Ok(Some(serde_json::from_slice(&bytes).map_err(|e| {
            anyhow::anyhow!("corrupt manifest {}: {e}", p.display())
        })?))
    }

    pub fn save(&self, work: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(work)?;
        std::fs::write(work.join(MANIFEST_FILE), litforge_core::corpus::to_canonical_json(self))?;
        Ok(())
    }
}

/// Checks `total == kept + sum(discarded)` for one stage's counts.
pub fn conserves(counts: &BTreeMap<String, u64>, total: &str, kept: &str, discard_prefix: &str) -> bool {
    let discarded: u64 = counts
        .iter()
        .filter(|(k, _)| k.starts_with(discard_prefix))
        .map(|(_, v)| v)
        .sum();
    counts.get(total).copied() == Some(counts.get(kept).copied().unwrap_or(0) + discarded)
}
