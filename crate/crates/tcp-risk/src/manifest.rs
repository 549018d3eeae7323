//! Run manifest: enough provenance to reproduce any output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub command: String,
    /// Effective configuration after flag/config-file/default precedence.
    pub config: serde_json::Value,
    pub master_seed: u64,
    /// SHA-256 of the input file, when there is one.
    pub input_digest: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    /// Output files this manifest covers.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, master_seed: u64) -> Self {
        Self {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            master_seed,
            input_digest: None,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = chrono::Utc::now().to_rfc3339();
    }
}

/// Hex SHA-256 digest of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}
