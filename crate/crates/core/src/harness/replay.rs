use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::commands::{cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_reference};
use crate::harness::manifest::{Command, Manifest};
use crate::harness::report::cmd_report;

/// Differences between a recorded run and its re-execution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayOutcome {
    pub mismatches: Vec<String>,
}

impl ReplayOutcome {
    pub fn is_exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn parent_dir(p: &Path) -> Result<&Path> {
    p.parent()
        .ok_or_else(|| Error::format("manifest", format!("{} has no parent directory", p.display())))
}

/// Re-runs the command recorded at `manifest` into the empty directory `scratch`
/// and compares every output and metric with the original.
pub fn replay(manifest: &Path, scratch: &Path) -> Result<ReplayOutcome> {
    let dir = if manifest.is_dir() { manifest.to_path_buf() } else { parent_dir(manifest)?.to_path_buf() };
    let rec = Manifest::load(&dir)?;
    let task = || rec.task.clone().ok_or_else(|| Error::format("manifest", "no task recorded"));
    let cfg = &rec.config;
    let again = match rec.command {
        Command::Pretrain => cmd_pretrain(&task()?, rec.seed, scratch, cfg)?,
        Command::Finetune => {
            let method = rec.method.ok_or_else(|| Error::format("manifest", "no method recorded"))?;
            let base = parent_dir(rec.input("base_checkpoint")?)?;
            cmd_finetune(&task()?, method, base, rec.seed, scratch, cfg)?
        }
        Command::Reference => cmd_reference(&task()?, rec.seed, scratch, cfg)?,
        Command::Evaluate => cmd_evaluate(rec.input("estimate")?, rec.input("reference")?, rec.seed, scratch, cfg)?,
        Command::Report => {
            let inputs: Vec<PathBuf> = rec.inputs.values().cloned().collect();
            cmd_report(&inputs, scratch)?
        }
    };
    let mut out = ReplayOutcome::default();
    for (role, rel) in &rec.outputs {
        if role == "metrics" {
            continue;
        }
        let a = std::fs::read(dir.join(rel)).map_err(|e| Error::io(dir.join(rel), e))?;
        match again.outputs.get(role).map(|p| std::fs::read(scratch.join(p))) {
            Some(Ok(b)) if a == b => {}
            _ => out.mismatches.push(format!("output {role} differs")),
        }
    }
    match (&rec.metrics, &again.metrics) {
        (None, None) => {}
        (Some(a), Some(b)) => {
            if a.wass.to_bits() != b.wass.to_bits() {
                out.mismatches.push(format!("wass {} vs {}", a.wass, b.wass));
            }
            if a.mmd_sq.to_bits() != b.mmd_sq.to_bits() {
                out.mismatches.push(format!("mmd_sq {} vs {}", a.mmd_sq, b.mmd_sq));
            }
            if (a.n_ref, a.n_est, &a.task, &a.method) != (b.n_ref, b.n_est, &b.task, &b.method) {
                out.mismatches.push("metric report labels differ".into());
            }
        }
        _ => out.mismatches.push("metrics present in only one run".into()),
    }
    if rec.stats != again.stats {
        out.mismatches.push("diagnostics differ".into());
    }
    Ok(out)
}
