//! The JSON run manifest written beside every run's outputs.

use std::path::Path;

use mcdl_core::{io, Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// `ok` or `failed`.
    pub status: String,
    pub error: Option<String>,
    /// Every setting, defaults included. Accepted back by `--config`.
    pub config: Value,
    pub seeds: Value,
    pub parallelism: Option<usize>,
    pub duration_seconds: f64,
    /// Files written in the output directory, manifest excluded.
    pub outputs: Vec<String>,
    pub metrics: Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        io::write_text(&dir.join(MANIFEST_FILE), &(text + "\n"))
    }
}

/// Reads a config from flat TOML, or from the `config` field of a manifest
/// when the file ends in `.json`.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if path.extension().is_some_and(|e| e == "json") {
        let source_name = path.display().to_string();
        let parse_err = |message: String| Error::Parse {
            source_name: source_name.clone(),
            message,
        };
        let text = io::read_text(path).map_err(|e| parse_err(e.to_string()))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        serde_json::from_value(manifest.config).map_err(|e| parse_err(format!("config: {e}")))
    } else {
        mcdl_core::config::load_config(path)
    }
}
