//! Strict JSON config loading and run manifests.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

pub const TOOL: &str = "arlab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written to every output directory. Passing it back via `--config`
/// re-runs the same experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Worker count used; outputs do not depend on it.
    pub threads: usize,
    pub config: Value,
    pub outputs: Vec<String>,
}

fn is_manifest(v: &Value) -> bool {
    v.get("tool").and_then(Value::as_str) == Some(TOOL) && v.get("config").is_some()
}

/// Reads a subcommand config, or the config embedded in a manifest written
/// by the same subcommand. An empty document is parsed as `{}` so the
/// message names the first missing field.
pub fn load<T: DeserializeOwned>(path: &Path, subcommand: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let text = if text.trim().is_empty() { "{}" } else { text.as_str() };
    let value: Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let value = if is_manifest(&value) {
        let m: Manifest = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: malformed manifest: {e}", path.display())))?;
        if m.subcommand != subcommand {
            return Err(CliError::Config(format!(
                "{}: manifest was written by `{}`, not `{subcommand}`",
                path.display(),
                m.subcommand
            )));
        }
        m.config
    } else {
        value
    };
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Output directory plus the list of files written so far.
pub struct OutDir {
    pub root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    /// Path for `name`, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.file(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.file(name);
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn finish<T: Serialize>(mut self, subcommand: &str, threads: usize, config: &T) -> Result<(), CliError> {
        let mut outputs = std::mem::take(&mut self.written);
        outputs.sort();
        outputs.dedup();
        let manifest = Manifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            subcommand: subcommand.into(),
            threads,
            config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
