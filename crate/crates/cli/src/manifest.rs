//! Run manifests: what a subcommand read, what it wrote, and with which seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deanchor_core::config::RunConfig;
use deanchor_core::schema::{self, SchemaError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_KIND: &str = "run_manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: RunConfig,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
    pub outputs: Vec<OutputFile>,
    pub duration_seconds: f64,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

impl RunManifest {
    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }

    pub fn to_document(&self) -> String {
        schema::to_document(MANIFEST_KIND, self).expect("manifest serializes")
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        schema::from_document(MANIFEST_KIND, text)
    }

    /// Outputs whose current contents no longer match the recorded hash.
    pub fn stale_outputs(&self) -> Vec<PathBuf> {
        self.outputs
            .iter()
            .filter(|o| sha256_file(&o.path).map_or(true, |h| h != o.sha256))
            .map(|o| o.path.clone())
            .collect()
    }
}
