//! Output directory bookkeeping and the run manifest sidecar.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// A bad flag or flag combination; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Everything needed to re-run a command and find its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
    pub results: Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// One command invocation writing into `--out`.
pub struct Run {
    dir: PathBuf,
    outputs: Vec<String>,
    start: Instant,
}

impl Run {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
            start: Instant::now(),
        })
    }

    /// Path of a new output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn finish(self, command: &str, config: &impl Serialize, seed: u64, results: Value) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seed,
            version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
            threads: kwta_core::par::threads(),
            outputs: self.outputs,
            duration_secs: self.start.elapsed().as_secs_f64(),
            results,
        };
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
