//! Run manifests: what produced an artifact.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::Result;
use crate::net::NetSpec;

/// Fields that determine a run's results.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestCore {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub net: Option<NetSpec>,
    /// SHA-256 over the dataset index and every file it lists.
    pub dataset_fingerprint: Option<String>,
    /// `"seeded:<n>"` or the SHA-256 of the weight file.
    pub feature_extractor: Option<String>,
    pub finetune: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub core: ManifestCore,
    /// Hex SHA-256 of the JSON-encoded core.
    pub hash: String,
    pub started_unix: u64,
}

impl ManifestCore {
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        Sha256::digest(&json).into()
    }
}

impl RunManifest {
    pub fn new(core: ManifestCore) -> Self {
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            hash: hex(&core.digest()),
            core,
            started_unix,
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        self.core.digest()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
