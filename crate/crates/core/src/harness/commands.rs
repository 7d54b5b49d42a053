use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::seq::index::sample;

use crate::adapt::{finetune, Method};
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::flow::ConditionalFlow;
use crate::harness::config::RunConfig;
use crate::harness::manifest::{prepare_out_dir, Command, Manifest};
use crate::harness::tasks::{task, TaskSpec};
use crate::metrics::{mmd_squared, wasserstein, MetricReport, SampleSet};
use crate::mh::mh_reference;
use crate::rng::{derive_seed, seeded, stream};
use crate::sim::io::{read_samples, write_dataset, write_samples, write_series};
use crate::sim::{ParameterVector, Simulator, TimeSeries};
use crate::snpe::{draw_from_proposal, run_sequential, FullParams, Proposal, SnpeRun, StandardizerMode};

pub const FLOW_FILE: &str = "flow.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const OBSERVATION_FILE: &str = "observation.csv";
pub const DATASET_FILE: &str = "dataset.csv";
pub const ADAPTER_FILE: &str = "adapter.json";
pub const METRICS_FILE: &str = "metrics.json";

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn checked_task(name: &str) -> Result<TaskSpec> {
    let t = task(name)?;
    t.validate()?;
    Ok(t)
}

/// Posterior draws at `y` inside the prior box.
fn posterior_samples(
    flow: &ConditionalFlow,
    store: &ParamStore<f64>,
    t: &TaskSpec,
    y: &TimeSeries<f64>,
    n: usize,
    seed: u64,
) -> Result<(Vec<ParameterVector<f64>>, f64)> {
    let proposal = Proposal::FlowAtObservation {
        store: Arc::new(store.clone()),
        observation: y.clone(),
    };
    draw_from_proposal(flow, &proposal, &t.prior()?, n, derive_seed(seed, stream::EVAL, 0))
}

fn record_run(m: &mut Manifest, run: &SnpeRun<f64>) {
    m.stat("traces", &run.traces);
    m.stat("proposal_acceptance", &run.acceptance);
    m.stat("simulations", run.dataset.len());
}

fn finish(mut m: Manifest, dir: &Path, started: Instant) -> Result<Manifest> {
    m.wall_clock_secs = started.elapsed().as_secs_f64();
    m.save(dir)?;
    Ok(m)
}

fn write_common(
    m: &mut Manifest,
    dir: &Path,
    flow: &ConditionalFlow,
    store: &ParamStore<f64>,
    t: &TaskSpec,
    y: &TimeSeries<f64>,
) -> Result<()> {
    write_series(&dir.join(OBSERVATION_FILE), y)?;
    m.outputs.insert("observation".into(), OBSERVATION_FILE.into());
    flow.save(&dir.join(FLOW_FILE), store)?;
    m.outputs.insert("flow".into(), FLOW_FILE.into());
    let (samples, rate) = posterior_samples(flow, store, t, y, m.config.eval_samples, m.seed)?;
    write_samples(&dir.join(SAMPLES_FILE), &samples)?;
    m.outputs.insert("samples".into(), SAMPLES_FILE.into());
    m.stat("sample_acceptance", rate);
    m.stat("observation_seed", t.observation_seed());
    Ok(())
}

/// Sequential SNPE from a fresh flow on `task`'s own observation.
pub fn cmd_pretrain(task_name: &str, seed: u64, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    cfg.validate()?;
    let t = checked_task(task_name)?;
    prepare_out_dir(out_dir)?;
    let mut m = Manifest::new(Command::Pretrain, seed, cfg);
    m.task = Some(t.name.clone());
    let y = t.observation()?;
    let (steps, dims) = Simulator::<f64>::obs_shape(&t.model);
    let d = Simulator::<f64>::theta_dim(&t.model);
    let mut flow = ConditionalFlow::new(cfg.flow_config(d, steps, dims))?;
    let mut learner = FullParams::new(flow.init_store(derive_seed(seed, stream::INIT, 0)));
    let run = run_sequential(
        &mut flow,
        &mut learner,
        &t.model,
        &t.prior()?,
        &y,
        &cfg.schedule,
        StandardizerMode::FitRoundZero,
        seed,
    )?;
    record_run(&mut m, &run);
    m.stat("trainable_dim", learner.store().len());
    write_dataset(&out_dir.join(DATASET_FILE), run.dataset.records())?;
    m.outputs.insert("dataset".into(), DATASET_FILE.into());
    write_common(&mut m, out_dir, &flow, learner.store(), &t, &y)?;
    finish(m, out_dir, started)
}

/// Adapts the checkpoint in `base_dir` to `task` with `method`.
pub fn cmd_finetune(
    task_name: &str,
    method: Method,
    base_dir: &Path,
    seed: u64,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<Manifest> {
    let started = Instant::now();
    cfg.validate()?;
    let t = checked_task(task_name)?;
    let base = Manifest::load(base_dir)?;
    if base.command != Command::Pretrain {
        return Err(Error::InvalidConfig(format!("{} does not hold a pretrained checkpoint", base_dir.display())));
    }
    match (&t.pretrain_source, &base.task) {
        (Some(src), Some(got)) if src == got => {}
        (src, got) => {
            return Err(Error::InvalidConfig(format!(
                "task {} adapts a checkpoint of {:?}, found one of {:?}",
                t.name, src, got
            )))
        }
    }
    let ckpt = base.output(base_dir, "flow")?;
    let (mut flow, phi0) = ConditionalFlow::load::<f64>(&ckpt)?;
    prepare_out_dir(out_dir)?;
    let mut m = Manifest::new(Command::Finetune, seed, cfg);
    m.task = Some(t.name.clone());
    m.method = Some(method);
    m.inputs.insert("base_checkpoint".into(), absolute(&ckpt));
    let y = t.observation()?;
    let out = finetune(method, &mut flow, &phi0, &t.model, &t.prior()?, &y, &cfg.schedule, &cfg.adapt, seed)?;
    if let Some(run) = &out.run {
        record_run(&mut m, run);
    }
    m.stat("trainable_dim", out.trainable_dim);
    m.stat("total_dim", phi0.len());
    if !out.subspaces.is_empty() {
        m.stat("subspaces", &out.subspaces);
    }
    if let Some(a) = &out.adapter {
        a.save(&out_dir.join(ADAPTER_FILE))?;
        m.outputs.insert("adapter".into(), ADAPTER_FILE.into());
    }
    write_common(&mut m, out_dir, &flow, &out.store, &t, &y)?;
    finish(m, out_dir, started)
}

/// Metropolis–Hastings draws from the exact posterior at `task`'s observation.
/// Fails without writing a manifest when the chains disagree.
pub fn cmd_reference(task_name: &str, seed: u64, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    cfg.validate()?;
    let t = checked_task(task_name)?;
    prepare_out_dir(out_dir)?;
    let y = t.observation()?;
    let model = &t.model;
    let loglik = |th: &ParameterVector<f64>| model.loglik(th, &y);
    let r = mh_reference(&loglik, &t.prior()?, &cfg.mh, cfg.mh_chains, seed)?;
    if !r.converged(cfg.rhat_threshold) {
        return Err(Error::Degenerate(format!(
            "reference chains for {} did not mix: split R-hat {:?}",
            t.name, r.rhat
        )));
    }
    let mut m = Manifest::new(Command::Reference, seed, cfg);
    m.task = Some(t.name.clone());
    write_series(&out_dir.join(OBSERVATION_FILE), &y)?;
    m.outputs.insert("observation".into(), OBSERVATION_FILE.into());
    write_samples(&out_dir.join(SAMPLES_FILE), &r.samples)?;
    m.outputs.insert("samples".into(), SAMPLES_FILE.into());
    m.stat("acceptance", &r.acceptance);
    m.stat("rhat", &r.rhat);
    m.stat("chain_seeds", &r.chain_seeds);
    finish(m, out_dir, started)
}

fn subsample(points: Vec<ParameterVector<f64>>, n: usize, seed: u64) -> Vec<ParameterVector<f64>> {
    if points.len() <= n {
        return points;
    }
    let mut idx = sample(&mut seeded(seed), points.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| points[i].clone()).collect()
}

fn sibling_manifest(samples: &Path) -> Option<Manifest> {
    Manifest::load(samples.parent()?).ok()
}

/// WASS and MMD² between two sample files, each reduced to at most
/// `eval_samples` draws chosen without replacement.
pub fn cmd_evaluate(estimate: &Path, reference: &Path, seed: u64, out_dir: &Path, cfg: &RunConfig) -> Result<Manifest> {
    let started = Instant::now();
    prepare_out_dir(out_dir)?;
    let est = read_samples::<f64>(estimate)?;
    let refs = read_samples::<f64>(reference)?;
    let pick = derive_seed(seed, stream::EVAL, 1);
    let est = subsample(est, cfg.eval_samples, pick);
    let refs = subsample(refs, cfg.eval_samples, pick);
    let a = SampleSet::from_params(&est)?;
    let b = SampleSet::from_params(&refs)?;
    let from = sibling_manifest(estimate);
    let mut m = Manifest::new(Command::Evaluate, seed, cfg);
    m.task = from.as_ref().and_then(|f| f.task.clone());
    m.method = from.as_ref().and_then(|f| f.method);
    let report = MetricReport {
        task: m.task.clone().unwrap_or_else(|| "unknown".into()),
        method: match (&from, m.method) {
            (_, Some(meth)) => meth.name().into(),
            (Some(f), None) if f.command == Command::Pretrain => "pretrained".into(),
            _ => "unknown".into(),
        },
        wass: wasserstein(&a, &b)?,
        mmd_sq: mmd_squared(&a, &b)?,
        n_ref: b.len(),
        n_est: a.len(),
        seeds: std::iter::once(seed).chain(from.as_ref().map(|f| f.seed)).collect(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    m.inputs.insert("estimate".into(), absolute(estimate));
    m.inputs.insert("reference".into(), absolute(reference));
    let path = out_dir.join(METRICS_FILE);
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::format("metric report", e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    m.outputs.insert("metrics".into(), METRICS_FILE.into());
    m.metrics = Some(report);
    finish(m, out_dir, started)
}
