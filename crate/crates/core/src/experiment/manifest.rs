use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Completion record of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the config parts the stage depends on.
    pub hash: String,
    /// Seconds since the Unix epoch.
    pub finished: u64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
}

/// Everything a run directory contains, keyed by stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self { config_hash, version: env!("CARGO_PKG_VERSION").to_string(), stages: BTreeMap::new() }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    /// Loads the manifest in `dir`, or starts an empty one.
    pub fn open(dir: &Path, config_hash: &str) -> Result<Self> {
        let p = Self::path(dir);
        if !p.exists() {
            return Ok(Self::new(config_hash.to_string()));
        }
        let text = std::fs::read_to_string(&p)?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        m.config_hash = config_hash.to_string();
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(tmp, Self::path(dir))?;
        Ok(())
    }

    /// Whether `stage` finished with `hash` and its artifacts still exist.
    pub fn is_complete(&self, dir: &Path, stage: &str, hash: &str) -> bool {
        self.stages
            .get(stage)
            .is_some_and(|r| r.hash == hash && r.artifacts.iter().all(|a| dir.join(a).exists()))
    }

    /// Refuses to overwrite outputs of `stage` produced from a different
    /// config unless `force` is set.
    pub fn check_overwrite(&self, dir: &Path, stage: &str, hash: &str, force: bool) -> Result<()> {
        match self.stages.get(stage) {
            Some(r) if r.hash != hash && !force && r.artifacts.iter().any(|a| dir.join(a).exists()) => Err(Error::Config(format!(
                "{} holds `{stage}` outputs from a different config (hash {}); pass --force to replace them",
                dir.display(),
                &r.hash[..12.min(r.hash.len())]
            ))),
            _ => Ok(()),
        }
    }

    pub fn record(&mut self, stage: &str, hash: &str, artifacts: Vec<String>) {
        let finished = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.stages.insert(stage.to_string(), StageRecord { hash: hash.to_string(), finished, artifacts });
    }

    /// Drops stages that depend on `stage`'s outputs.
    pub fn invalidate_after(&mut self, order: &[&str], stage: &str) {
        if let Some(i) = order.iter().position(|s| *s == stage) {
            for s in &order[i + 1..] {
                self.stages.remove(*s);
            }
        }
    }
}
