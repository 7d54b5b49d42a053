use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sbi_ttt_core::adapt::{Method, RankSpec};
use sbi_ttt_core::harness::{
    builtin_tasks, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_reference, cmd_report, render_table, replay,
    run_experiment, ArtifactLayout, Manifest, RunConfig, ROOT_ENV,
};

/// Sequential neural posterior estimation with test-time adaptation.
#[derive(Parser)]
#[command(name = "sbi-ttt", version)]
struct Cli {
    /// Artifact root directory.
    #[arg(long, env = ROOT_ENV, default_value = "artifacts", global = true)]
    root: PathBuf,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// File of `key = value` lines applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Single overrides, `key=value`, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects key=value, got {kv:?}");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a flow from scratch on a task's observation.
    Pretrain {
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Adapt a pretrained checkpoint to a shifted task.
    Finetune {
        #[arg(long)]
        task: String,
        #[arg(long)]
        method: Method,
        /// Pretraining output directory. Defaults to the source task's run with the same seed.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// LoRA rank, or subspace rank for gs-ttt and gs-pea.
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        snapshots: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Draw reference posterior samples by Metropolis–Hastings.
    Reference {
        #[arg(long)]
        task: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare two sample files.
    Evaluate {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Summarize evaluation manifests into a table, CSV and histogram data.
    Report {
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain, fine-tune with each method, and evaluate against the reference.
    Run {
        #[arg(long)]
        task: String,
        #[arg(long, value_delimiter = ',', default_value = "snpe,ttt,lora,gs-ttt,gs-pea")]
        methods: Vec<Method>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Re-run a recorded command and compare its outputs.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        scratch: PathBuf,
    },
    /// List the built-in tasks.
    Tasks,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_manifest(dir: &std::path::Path, m: &Manifest) {
    println!("{:?} finished in {:.1}s -> {}", m.command, m.wall_clock_secs, dir.display());
    if let Some(r) = &m.metrics {
        println!("{} {}: WASS {:.4}  MMD^2 {:.4}", r.task, r.method, r.wass, r.mmd_sq);
    }
}

fn run(cli: Cli) -> Result<()> {
    let layout = ArtifactLayout::new(&cli.root);
    match cli.command {
        Cmd::Pretrain { task, seed, out, cfg } => {
            let cfg = cfg.load()?;
            let dir = out.unwrap_or_else(|| layout.pretrain(&task, seed));
            let m = cmd_pretrain(&task, seed, &dir, &cfg)?;
            print_manifest(&dir, &m);
        }
        Cmd::Finetune { task, method, base, seed, out, rank, alpha, snapshots, cfg } => {
            let mut cfg = cfg.load()?;
            if let Some(r) = rank {
                match method {
                    Method::Lora => cfg.adapt.lora.rank = r,
                    _ => cfg.adapt.subspace.rank = RankSpec::Fixed { rank: r },
                }
            }
            if let Some(a) = alpha {
                cfg.adapt.lora.alpha = a;
            }
            if let Some(b) = snapshots {
                cfg.adapt.subspace.snapshots = b;
            }
            cfg.validate()?;
            let base = match base {
                Some(b) => b,
                None => {
                    let spec = sbi_ttt_core::harness::task(&task)?;
                    let src = spec.pretrain_source.context("task has no pretraining source, pass --base")?;
                    layout.pretrain(&src, seed)
                }
            };
            let dir = out.unwrap_or_else(|| layout.finetune(&task, method, seed));
            let m = cmd_finetune(&task, method, &base, seed, &dir, &cfg)?;
            print_manifest(&dir, &m);
        }
        Cmd::Reference { task, seed, out, cfg } => {
            let cfg = cfg.load()?;
            let seed = seed.unwrap_or(cfg.reference_seed);
            let dir = out.unwrap_or_else(|| layout.reference(&task, seed));
            let m = cmd_reference(&task, seed, &dir, &cfg)?;
            print_manifest(&dir, &m);
        }
        Cmd::Evaluate { estimate, reference, seed, out, cfg } => {
            let cfg = cfg.load()?;
            let m = cmd_evaluate(&estimate, &reference, seed, &out, &cfg)?;
            print_manifest(&out, &m);
        }
        Cmd::Report { manifests, out } => {
            if manifests.is_empty() {
                bail!("no manifests given");
            }
            let dir = out.unwrap_or_else(|| layout.report("latest"));
            cmd_report(&manifests, &dir)?;
            print!("{}", std::fs::read_to_string(dir.join(sbi_ttt_core::harness::REPORT_TXT))?);
        }
        Cmd::Run { task, methods, seeds, cfg } => {
            let cfg = cfg.load()?;
            let mut all = Vec::new();
            for seed in seeds {
                all.extend(run_experiment(&layout, &task, &methods, seed, &cfg)?);
            }
            print!("{}", render_table(&sbi_ttt_core::harness::collect_rows(&all)?));
        }
        Cmd::Replay { manifest, scratch } => {
            let out = replay(&manifest, &scratch)?;
            if !out.is_exact() {
                bail!("replay differs: {}", out.mismatches.join("; "));
            }
            println!("replay identical");
        }
        Cmd::Tasks => {
            for t in builtin_tasks() {
                let src = t.pretrain_source.as_deref().unwrap_or("-");
                println!("{:<14} theta* = {:?}  pretrained on {src}", t.name, t.theta_star);
            }
        }
    }
    Ok(())
}
