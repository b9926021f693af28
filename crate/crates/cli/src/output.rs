//! Config loading, run manifests and file writing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use seqimit_core::trainer::ExperimentConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{ConfigArgs, UsageError};

/// Defaults, then the config file, then each `--set`, then validation.
pub fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    for o in &args.overrides {
        cfg.apply_override(o)
            .with_context(|| format!("in override `{o}`"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Git-style content hash of the canonical config text. The canonical form
/// lists keys in a fixed order, so the hash ignores how the source file
/// ordered them.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = cfg.to_text();
    let mut h = Sha256::new();
    h.update(format!("config {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: &'static str,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let config = ExperimentConfig::KEYS
            .iter()
            .map(|k| (k.to_string(), cfg.get(k).expect("listed key")))
            .collect();
        Self {
            status: "running",
            config_hash: config_hash(cfg),
            config,
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))
}

/// Renders records as CSV with the given header.
pub fn csv_string<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
