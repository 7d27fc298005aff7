use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineConfig;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// Path relative to the run directory (forward slashes) -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under the run directory and rewrites the manifest.
pub fn write_manifest(run_dir: &Path, cfg: &PipelineConfig) -> Result<RunManifest> {
    let mut files = Vec::new();
    collect_files(run_dir, &mut files)?;
    let mut artifacts = BTreeMap::new();
    for path in files {
        let rel = path.strip_prefix(run_dir).expect("under run dir");
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if key == MANIFEST_NAME {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        artifacts.insert(key, sha256_hex(&bytes));
    }
    let canonical = cfg.canonical_json();
    let manifest = RunManifest {
        config_sha256: sha256_hex(canonical.as_bytes()),
        config: serde_json::from_str(&canonical)?,
        artifacts,
    };
    let path = run_dir.join(MANIFEST_NAME);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
