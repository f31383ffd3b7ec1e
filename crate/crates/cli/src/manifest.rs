//! Run manifests: one JSON file per invocation with everything needed to
//! reproduce the run bit for bit (resolved config, seed, thread count),
//! plus wall-clock timestamps for bookkeeping.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved configuration with all defaults materialized.
    pub config: serde_json::Value,
    pub seed: u64,
    pub tool_version: String,
    pub threads: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(subcommand: &str, seed: u64, threads: usize, config: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            started_unix: now_unix(),
            finished_unix: 0,
        }
    }

    /// Stamp the finish time and write to `path`.
    pub fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.finished_unix = now_unix();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::Data(format!("run manifest: {}", e)))?;
        std::fs::write(path, json)
            .map_err(|e| CliError::Data(format!("writing {}: {}", path.display(), e)))?;
        Ok(())
    }
}

/// Default manifest location: beside the primary output.
pub fn manifest_path(explicit: &Option<PathBuf>, primary_output: &Path) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => {
            let mut os = primary_output.as_os_str().to_owned();
            os.push(".manifest.json");
            PathBuf::from(os)
        }
    }
}
