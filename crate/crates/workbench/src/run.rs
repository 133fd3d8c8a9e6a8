//! Run manifests and artifact hashing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pathoscope_core::model::MODEL_VERSION;
use pathoscope_core::patchset::{MANIFEST_VERSION, PATCH_CACHE_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatVersions {
    pub corpus_manifest: u32,
    pub patch_cache: u32,
    pub model: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        Self { corpus_manifest: MANIFEST_VERSION, patch_cache: PATCH_CACHE_VERSION, model: MODEL_VERSION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub formats: FormatVersions,
    pub config: serde_json::Value,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    /// Input name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the run directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    /// Command-specific figures (pipeline statistics, metrics).
    #[serde(default)]
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize");
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            formats: FormatVersions::default(),
            config,
            config_hash,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            summary: serde_json::Value::Null,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Records an artifact already written under `out`.
    pub fn artifact(&mut self, out: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(out).unwrap_or(path);
        let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        self.artifacts.insert(key, file_sha256(path)?);
        Ok(())
    }

    pub fn path_in(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::path_in(out, &self.command);
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a sibling temporary file and a rename, so readers never
/// observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}
