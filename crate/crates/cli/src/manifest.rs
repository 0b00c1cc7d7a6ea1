//! Run manifests: the resolved configuration, dataset fingerprints, and
//! provenance stamps written alongside every run's outputs. A manifest can
//! be passed back as `--config` to repeat the run.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FlatConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileFingerprint {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// ok | diverged
    pub status: String,
    pub config: FlatConfig,
    pub data_dir: String,
    pub dataset_fingerprints: BTreeMap<String, FileFingerprint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub git_describe: Option<String>,
    pub created_at: String,
}

pub fn fingerprint_file(path: &Path) -> Result<FileFingerprint> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("fingerprinting {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(FileFingerprint {
        bytes: bytes.len() as u64,
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Fingerprint every regular file directly inside a prepared dataset
/// directory, keyed by file name.
pub fn fingerprint_dir(dir: &Path) -> Result<BTreeMap<String, FileFingerprint>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            out.insert(
                entry.file_name().to_string_lossy().into_owned(),
                fingerprint_file(&entry.path())?,
            );
        }
    }
    Ok(out)
}

pub fn git_describe() -> Option<String> {
    let out = Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let s = String::from_utf8_lossy(&out.stdout).trim().to_string();
    if s.is_empty() {
        None
    } else {
        Some(s)
    }
}

pub fn build_manifest(
    command: &str,
    status: &str,
    config: FlatConfig,
    data_dir: &Path,
) -> Result<RunManifest> {
    Ok(RunManifest {
        command: command.to_string(),
        status: status.to_string(),
        config,
        data_dir: data_dir.display().to_string(),
        dataset_fingerprints: fingerprint_dir(data_dir)?,
        git_describe: git_describe(),
        created_at: chrono::Utc::now().to_rfc3339(),
    })
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}
