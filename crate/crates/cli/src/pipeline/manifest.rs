//! Run manifests: what was executed, from which inputs, producing which
//! bytes.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use super::digest::{digest_file, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Computed,
    Cached,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub status: StageStatus,
    /// File name -> content digest for every stage output.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_digest: String,
    pub input_digests: BTreeMap<String, String>,
    pub started_unix_secs: u64,
    pub finished_unix_secs: u64,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    /// Every file under the output directory (relative path -> digest).
    pub files: BTreeMap<String, String>,
    /// Set when the run aborted; names the failing stage.
    #[serde(default)]
    pub failed_stage: Option<String>,
}

pub fn now_unix_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_digest: String) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            input_digests: BTreeMap::new(),
            started_unix_secs: now_unix_secs(),
            finished_unix_secs: 0,
            stages: Vec::new(),
            warnings: Vec::new(),
            files: BTreeMap::new(),
            failed_stage: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Walk the output directory and record a digest for every file except
    /// the manifest itself.
    pub fn collect_files(&mut self, out_dir: &Path) -> std::io::Result<()> {
        self.files.clear();
        let mut pending = vec![out_dir.to_path_buf()];
        while let Some(dir) = pending.pop() {
            for entry in std::fs::read_dir(&dir)? {
                let entry = entry?;
                let path = entry.path();
                if path.is_dir() {
                    pending.push(path);
                } else if path.file_name().is_some_and(|n| n != "manifest.json") {
                    let relative = path
                        .strip_prefix(out_dir)
                        .unwrap_or(&path)
                        .to_string_lossy()
                        .replace('\\', "/");
                    self.files.insert(relative, digest_file(&path)?);
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&out_dir.join("manifest.json"), text.as_bytes())
    }

    pub fn load(out_dir: &Path) -> anyhow::Result<RunManifest> {
        let text = std::fs::read_to_string(out_dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}
