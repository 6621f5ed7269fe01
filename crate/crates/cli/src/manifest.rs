//! Run manifests: enough metadata to reproduce or audit a run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    /// SHA-256 of the effective (override-applied) configuration text.
    pub config_sha256: String,
    pub seed: u64,
    pub wall_time_secs: f64,
    /// Every file the run wrote, relative to the output directory.
    pub outputs: Vec<String>,
    pub verdicts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(config_text: &str, seed: u64) -> Self {
        RunManifest {
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex_digest(config_text),
            seed,
            wall_time_secs: 0.0,
            outputs: Vec::new(),
            verdicts: BTreeMap::new(),
        }
    }

    pub fn record_output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn record_verdict(&mut self, name: &str, pass: bool) {
        self.verdicts
            .insert(name.to_string(), if pass { "pass" } else { "fail" }.into());
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.values().all(|v| v == "pass")
    }

    /// Write atomically: the manifest appears complete or not at all.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        let tmp = out_dir.join("manifest.json.tmp");
        let path = out_dir.join("manifest.json");
        fs::write(&tmp, body).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("renaming to {}", path.display()))?;
        Ok(())
    }
}

pub fn hex_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
