//! Run manifests: everything that determines a command's output bytes.

use std::path::{Path, PathBuf};

use dimclust::FitConfig;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::failure::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    /// Hex SHA-256 of the file contents.
    pub fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    tool: &'static str,
    version: &'static str,
    subcommand: String,
    seed: u64,
    settings: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<FitConfig>,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    notes: Map<String, Value>,
}

impl Manifest {
    pub fn new(subcommand: &str, seed: u64, settings: Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            seed,
            settings,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Map::new(),
        }
    }

    pub fn config(mut self, config: &FitConfig) -> Self {
        self.config = Some(config.clone());
        self
    }

    pub fn input(mut self, record: InputRecord) -> Self {
        self.inputs.push(record);
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn extra(mut self, key: &str, value: Value) -> Self {
        self.notes.insert(key.to_string(), value);
        self
    }

    /// Writes to `<output>.manifest.json`.
    pub fn write_next_to(&self, output: &Path) -> Result<(), Failure> {
        let mut p = output.as_os_str().to_owned();
        p.push(".manifest.json");
        self.write_to(&PathBuf::from(p))
    }

    pub fn write_to(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
    }
}
