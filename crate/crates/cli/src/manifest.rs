use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Everything needed to replay one command.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// Fully resolved settings, including defaults.
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            args,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
