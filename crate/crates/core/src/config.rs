//! Flat TOML configuration files.
//!
//! A config file is a list of `key = value` lines with no tables. Unknown
//! keys, nested tables and type mismatches are errors that name the line and
//! key.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;

pub fn parse_config<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    let err = |message: String| Error::Parse {
        source_name: source_name.to_string(),
        message,
    };
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.to_string().trim().to_string()))?;
    if let Some((key, _)) = table.iter().find(|(_, v)| v.is_table()) {
        let line = line_of_key(text, key).map(|l| format!("line {l}: ")).unwrap_or_default();
        return Err(err(format!("{line}nested table `{key}` is not allowed in a flat config")));
    }
    toml::from_str(text).map_err(|e| err(e.to_string().trim().to_string()))
}

fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim();
        l == format!("[{key}]") || l.starts_with(&format!("{key} ")) || l.starts_with(&format!("{key}="))
    })
    .map(|i| i + 1)
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io::read_text(path).map_err(|e| match e {
        Error::Io { path, source } => Error::Parse {
            source_name: path.display().to_string(),
            message: source.to_string(),
        },
        other => other,
    })?;
    parse_config(&text, &path.display().to_string())
}

/// Serialises a fully resolved config, every default written out.
pub fn to_config_text<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Internal(format!("config serialisation failed: {e}")))
}
