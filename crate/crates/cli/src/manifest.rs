//! Per-stage run manifests and cache admission.
//!
//! Every stage directory carries a `manifest.json` recording the normalized
//! configuration hash, the seeds in play and the files the stage produced.
//! A stage whose manifest matches the current hash (and whose outputs still
//! exist) is skipped entirely, leaving its bytes untouched. Matching hashes
//! with differing normalized configurations abort: that is a hash collision,
//! not a cache hit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub toolkit_version: String,
    pub config_hash: String,
    /// Canonical JSON of the normalized configuration (collision detection).
    pub normalized_config: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub created_unix: u64,
    pub cache_hits: Vec<String>,
    /// Files the stage wrote, relative to its directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        stage: &str,
        config_hash: &str,
        normalized_config: &str,
        master_seed: u64,
        stage_seeds: BTreeMap<String, u64>,
    ) -> Self {
        Self {
            stage: stage.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            normalized_config: normalized_config.to_string(),
            master_seed,
            stage_seeds,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            cache_hits: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

pub fn manifest_path(stage_dir: &Path) -> std::path::PathBuf {
    stage_dir.join("manifest.json")
}

pub fn load(stage_dir: &Path) -> Option<RunManifest> {
    let text = fs::read_to_string(manifest_path(stage_dir)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn write(stage_dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    fs::create_dir_all(stage_dir)?;
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::Other(format!("manifest serialization failed: {e}")))?;
    fs::write(manifest_path(stage_dir), text)?;
    Ok(())
}

/// True when the stage can be skipped: matching hash and all outputs present.
/// Errors on a hash collision (same hash, different normalized config).
pub fn cache_hit(
    stage_dir: &Path,
    config_hash: &str,
    normalized_config: &str,
) -> Result<bool, CliError> {
    let Some(existing) = load(stage_dir) else {
        return Ok(false);
    };
    if existing.config_hash != config_hash {
        return Ok(false);
    }
    if existing.normalized_config != normalized_config {
        return Err(CliError::Other(format!(
            "config-hash collision in {}: identical hash {config_hash} for different configurations; aborting",
            stage_dir.display()
        )));
    }
    Ok(existing
        .outputs
        .iter()
        .all(|f| stage_dir.join(f).exists()))
}
