use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tables::write_file;

/// What a run needs to be repeated: the fully resolved config, the dataset
/// it read, and what it wrote. Timestamps are informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Resolved `key = value` config, every default materialized.
    pub config: String,
    pub dataset_sha256: String,
    pub runs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: String, dataset_sha256: String) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config,
            dataset_sha256,
            runs: Vec::new(),
            outputs: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        self.outputs.push("manifest.json".into());
        let json = serde_json::to_vec_pretty(&self).expect("manifest serializes");
        write_file(&dir.join("manifest.json"), &json)
    }
}
