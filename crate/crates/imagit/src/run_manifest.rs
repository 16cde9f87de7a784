//! `run_manifest.json`, one per output directory.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub git_describe: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub metric_files: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// `git describe --always --dirty` in the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

impl RunManifest {
    pub fn begin(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            git_describe: git_describe(),
            seed,
            started_unix: unix_now(),
            finished_unix: 0,
            metric_files: Vec::new(),
        }
    }

    pub fn finish(mut self, dir: &Path, metric_files: &[&str]) -> Result<()> {
        self.finished_unix = unix_now();
        self.metric_files = metric_files.iter().map(|s| s.to_string()).collect();
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
