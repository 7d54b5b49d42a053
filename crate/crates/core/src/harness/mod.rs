//! Experiment orchestration: built-in tasks, run configuration, the
//! pretrain / finetune / reference / evaluate / report commands and their
//! manifests.

mod commands;
mod config;
mod manifest;
mod replay;
mod report;
mod tasks;

use std::path::{Path, PathBuf};

pub use commands::{
    cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_reference, ADAPTER_FILE, DATASET_FILE, FLOW_FILE, METRICS_FILE,
    OBSERVATION_FILE, SAMPLES_FILE,
};
pub use config::RunConfig;
pub use manifest::{prepare_out_dir, Command, Manifest, MANIFEST_FILE, MANIFEST_VERSION};
pub use replay::{replay, ReplayOutcome};
pub use report::{
    cmd_report, collect_rows, render_csv, render_table, ReportRow, HIST1D_CSV, HIST2D_CSV, REPORT_CSV, REPORT_TXT,
};
pub use tasks::{builtin_tasks, task, TaskSpec, MVGBM_SIGMA};

use crate::adapt::Method;
use crate::error::{Error, Result};

pub const ROOT_ENV: &str = "SBI_TTT_ROOT";

/// Where each command's outputs live under the artifact root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ArtifactLayout { root: root.into() }
    }

    /// `$SBI_TTT_ROOT`, or `./artifacts` when unset.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| "artifacts".into()))
    }

    pub fn pretrain(&self, task: &str, seed: u64) -> PathBuf {
        self.root.join("pretrain").join(task).join(format!("seed-{seed}"))
    }

    pub fn finetune(&self, task: &str, method: Method, seed: u64) -> PathBuf {
        self.root.join("finetune").join(task).join(method.name()).join(format!("seed-{seed}"))
    }

    pub fn reference(&self, task: &str, seed: u64) -> PathBuf {
        self.root.join("reference").join(task).join(format!("seed-{seed}"))
    }

    pub fn evaluate(&self, task: &str, method: Method, seed: u64) -> PathBuf {
        self.root.join("evaluate").join(task).join(method.name()).join(format!("seed-{seed}"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("report").join(name)
    }
}

/// Loads the manifest in `dir` if one exists and was produced under `cfg`,
/// otherwise runs `f`.
pub fn reuse_or_run(dir: &Path, cfg: &RunConfig, f: impl FnOnce() -> Result<Manifest>) -> Result<Manifest> {
    if dir.join(MANIFEST_FILE).exists() {
        let m = Manifest::load(dir)?;
        if &m.config != cfg {
            return Err(Error::SeedCollision(dir.to_path_buf()));
        }
        return Ok(m);
    }
    f()
}

/// Pretraining on the source task, the cached reference of `target`, and one
/// fine-tune plus evaluation per method. Returns the evaluation manifests in
/// the order of `methods`.
pub fn run_experiment(
    layout: &ArtifactLayout,
    target: &str,
    methods: &[Method],
    seed: u64,
    cfg: &RunConfig,
) -> Result<Vec<Manifest>> {
    let t = task(target)?;
    let source = t
        .pretrain_source
        .clone()
        .ok_or_else(|| Error::InvalidConfig(format!("task {target} has no pretraining source")))?;
    let pre_dir = layout.pretrain(&source, seed);
    reuse_or_run(&pre_dir, cfg, || cmd_pretrain(&source, seed, &pre_dir, cfg))?;
    let ref_dir = layout.reference(target, cfg.reference_seed);
    let reference = reuse_or_run(&ref_dir, cfg, || cmd_reference(target, cfg.reference_seed, &ref_dir, cfg))?;
    let ref_samples = reference.output(&ref_dir, "samples")?;
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let ft_dir = layout.finetune(target, method, seed);
        let ft = reuse_or_run(&ft_dir, cfg, || cmd_finetune(target, method, &pre_dir, seed, &ft_dir, cfg))?;
        let ev_dir = layout.evaluate(target, method, seed);
        let est = ft.output(&ft_dir, "samples")?;
        out.push(reuse_or_run(&ev_dir, cfg, || cmd_evaluate(&est, &ref_samples, seed, &ev_dir, cfg))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
