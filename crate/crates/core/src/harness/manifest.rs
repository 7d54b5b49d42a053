use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::Method;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::metrics::MetricReport;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Pretrain,
    Finetune,
    Reference,
    Evaluate,
    Report,
}

/// What a command was asked to do, what it read and what it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub command: Command,
    pub task: Option<String>,
    pub method: Option<Method>,
    pub seed: u64,
    pub config: RunConfig,
    /// Files read, by role.
    pub inputs: BTreeMap<String, PathBuf>,
    /// Files written, by role, relative to the manifest's directory.
    pub outputs: BTreeMap<String, PathBuf>,
    pub metrics: Option<MetricReport>,
    /// Diagnostics such as loss traces, acceptance rates and trainable dimensions.
    pub stats: BTreeMap<String, Value>,
    pub wall_clock_secs: f64,
}

impl Manifest {
    pub fn new(command: Command, seed: u64, config: &RunConfig) -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            command,
            task: None,
            method: None,
            seed,
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: None,
            stats: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn stat(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("serializable diagnostic");
        self.stats.insert(key.into(), v);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format("manifest", e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        if !path.exists() {
            return Err(Error::Missing(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let raw: Value = serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?;
        let found = raw.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
        if found != MANIFEST_VERSION {
            return Err(Error::Version {
                path,
                expected: MANIFEST_VERSION,
                found,
            });
        }
        serde_json::from_value(raw).map_err(|e| Error::format(path.display().to_string(), e))
    }

    pub fn output(&self, dir: &Path, role: &str) -> Result<PathBuf> {
        self.outputs
            .get(role)
            .map(|p| dir.join(p))
            .ok_or_else(|| Error::format("manifest", format!("no {role} output recorded")))
    }

    pub fn input(&self, role: &str) -> Result<&Path> {
        self.inputs
            .get(role)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::format("manifest", format!("no {role} input recorded")))
    }
}

/// Creates `dir` for a new run. A directory that already holds a manifest is refused.
pub fn prepare_out_dir(dir: &Path) -> Result<()> {
    if dir.join(MANIFEST_FILE).exists() {
        return Err(Error::SeedCollision(dir.to_path_buf()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
