use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Identifier of the code that produced an artifact.
pub fn build_id() -> String {
    option_env!("CHAINID_BUILD_ID")
        .map(String::from)
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub run_id: String,
    pub config_hash: String,
    pub stage: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub artifacts: Vec<String>,
    pub build: String,
}

/// Layout of one run: `config.toml`, `datasets/`, `checkpoints/`,
/// `metrics/`, the report files and an append-only `manifest.jsonl`.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub run_id: String,
    pub config_hash: String,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl RunDir {
    /// Creates the run directory, or reopens it if it already holds the
    /// same configuration.
    pub fn create(root: &Path, config: &ExperimentConfig) -> Result<Self> {
        for sub in ["datasets", "checkpoints", "metrics"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let hash = config.config_hash();
        let config_path = root.join(CONFIG_FILE);
        if config_path.exists() {
            let existing = ExperimentConfig::load(&config_path)?;
            if existing.config_hash() != hash {
                return Err(Error::ConfigMismatch(format!(
                    "{} was created with config {}, not {}",
                    root.display(),
                    existing.config_hash(),
                    hash
                )));
            }
        } else {
            fs::write(&config_path, config.to_toml()?)?;
        }
        Ok(RunDir { root: root.to_path_buf(), run_id: run_id_of(root), config_hash: hash })
    }

    /// Opens an existing run and returns it with its configuration.
    pub fn open(root: &Path) -> Result<(Self, ExperimentConfig)> {
        let config = ExperimentConfig::load(&root.join(CONFIG_FILE))?;
        let hash = config.config_hash();
        Ok((RunDir { root: root.to_path_buf(), run_id: run_id_of(root), config_hash: hash }, config))
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Appends a stage record. Every listed artifact must already exist.
    pub fn record(&self, stage: &str, artifacts: &[&str]) -> Result<()> {
        for a in artifacts {
            if !self.path(a).exists() {
                return Err(Error::Format {
                    path: self.path(a),
                    reason: "artifact missing when recording the manifest".into(),
                });
            }
        }
        let entry = ManifestEntry {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            stage: stage.into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
            build: build_id(),
        };
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(MANIFEST_FILE))?;
        serde_json::to_writer(&mut f, &entry)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.path(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for line in BufReader::new(fs::File::open(&path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    /// Whether `stage` finished in an earlier invocation with the same
    /// configuration.
    pub fn completed(&self, stage: &str) -> Result<bool> {
        Ok(self
            .manifest()?
            .iter()
            .any(|e| e.stage == stage && e.config_hash == self.config_hash))
    }
}

fn run_id_of(root: &Path) -> String {
    root.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned())
}
