use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliResult};

/// Everything needed to rerun a command: the resolved configuration, the
/// seeds, the tool version and the files read and written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn begin(command: &str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            threads: rayon::current_num_threads(),
            started_at: now(),
            finished_at: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn config(mut self, cfg: &impl Serialize) -> Self {
        self.config = serde_json::to_value(cfg).expect("config serialises");
        self
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(mut self, p: impl Into<PathBuf>) -> Self {
        self.inputs.push(p.into());
        self
    }

    pub fn write(mut self, path: &Path) -> CliResult<()> {
        self.finished_at = now();
        self.outputs.push(path.to_path_buf());
        let json = serde_json::to_string_pretty(&self).expect("manifest serialises");
        std::fs::write(path, json).map_err(|e| io_err(path, e))
    }
}

fn now() -> String {
    chrono::Local::now().to_rfc3339()
}

/// `out.json` → `out.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    file.with_extension("manifest.json")
}
