//! Flat `key = value` run configuration. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptConfig, RankSpec};
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::mh::MhConfig;
use crate::snpe::RoundSchedule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schedule: RoundSchedule,
    pub flow_layers: usize,
    pub flow_hidden: Vec<usize>,
    pub embed_hidden: Vec<usize>,
    pub embed_dim: usize,
    pub scale_bound: f64,
    pub adapt: AdaptConfig,
    pub mh: MhConfig,
    pub mh_chains: usize,
    /// Seed of the reference chains, fixed per task so every run compares against the same draws.
    pub reference_seed: u64,
    pub rhat_threshold: f64,
    pub eval_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::new(1, 1, 1);
        RunConfig {
            schedule: RoundSchedule::standard(),
            flow_layers: flow.n_layers,
            flow_hidden: flow.hidden,
            embed_hidden: flow.embed_hidden,
            embed_dim: flow.embed_dim,
            scale_bound: flow.scale_bound,
            adapt: AdaptConfig::default(),
            mh: MhConfig::default(),
            mh_chains: 4,
            reference_seed: 0,
            rhat_threshold: 1.05,
            eval_samples: 1000,
        }
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| parse(key, t.trim())).collect()
}

impl RunConfig {
    pub fn flow_config(&self, theta_dim: usize, steps: usize, dims: usize) -> FlowConfig {
        FlowConfig {
            n_layers: self.flow_layers,
            hidden: self.flow_hidden.clone(),
            embed_hidden: self.embed_hidden.clone(),
            embed_dim: self.embed_dim,
            scale_bound: self.scale_bound,
            ..FlowConfig::new(theta_dim, steps, dims)
        }
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.schedule.train;
        match key {
            "schedule.sims" => self.schedule.sims_per_round = parse_list(key, v)?,
            "train.lr" => t.lr = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.max_epochs" => t.max_epochs = parse(key, v)?,
            "train.patience" => t.patience = parse(key, v)?,
            "train.val_fraction" => t.val_fraction = parse(key, v)?,
            "train.atoms" => t.atoms = parse(key, v)?,
            "flow.layers" => self.flow_layers = parse(key, v)?,
            "flow.hidden" => self.flow_hidden = parse_list(key, v)?,
            "flow.embed_hidden" => self.embed_hidden = parse_list(key, v)?,
            "flow.embed_dim" => self.embed_dim = parse(key, v)?,
            "flow.scale_bound" => self.scale_bound = parse(key, v)?,
            "lora.rank" => self.adapt.lora.rank = parse(key, v)?,
            "lora.alpha" => self.adapt.lora.alpha = parse(key, v)?,
            "lora.init_sigma" => self.adapt.lora.init_sigma = parse(key, v)?,
            "subspace.snapshots" => self.adapt.subspace.snapshots = parse(key, v)?,
            "subspace.batch_size" => self.adapt.subspace.batch_size = parse(key, v)?,
            "subspace.rank" => self.adapt.subspace.rank = RankSpec::Fixed { rank: parse(key, v)? },
            "subspace.energy" => self.adapt.subspace.rank = RankSpec::Energy { tau: parse(key, v)? },
            "mh.samples" => self.mh.n_samples = parse(key, v)?,
            "mh.burn_in" => self.mh.burn_in = parse(key, v)?,
            "mh.thin" => self.mh.thin = parse(key, v)?,
            "mh.step_fraction" => self.mh.step_fraction = parse(key, v)?,
            "mh.adapt" => self.mh.adapt_burnin = parse(key, v)?,
            "mh.target_accept" => self.mh.target_accept = parse(key, v)?,
            "mh.chains" => self.mh_chains = parse(key, v)?,
            "mh.rhat_threshold" => self.rhat_threshold = parse(key, v)?,
            "reference.seed" => self.reference_seed = parse(key, v)?,
            "eval.samples" => self.eval_samples = parse(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.flow_config(1, 1, 1).validate()?;
        self.adapt.subspace.validate()?;
        self.mh.validate()?;
        if self.mh_chains == 0 || self.eval_samples == 0 {
            return Err(Error::InvalidConfig("mh.chains and eval.samples must be positive".into()));
        }
        Ok(())
    }

    /// Every setting, in the format `from_text` reads.
    pub fn to_text(&self) -> String {
        let t = &self.schedule.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String, unit: &str| {
            let _ = if unit.is_empty() {
                writeln!(s, "{k} = {v}")
            } else {
                writeln!(s, "{k} = {v}  # {unit}")
            };
        };
        kv("schedule.sims", list(&self.schedule.sims_per_round), "simulations per round");
        kv("train.lr", t.lr.to_string(), "Adam step size");
        kv("train.batch_size", t.batch_size.to_string(), "pairs");
        kv("train.max_epochs", t.max_epochs.to_string(), "epochs");
        kv("train.patience", t.patience.to_string(), "epochs");
        kv("train.val_fraction", t.val_fraction.to_string(), "share of pairs");
        kv("train.atoms", t.atoms.to_string(), "atoms per pair");
        kv("flow.layers", self.flow_layers.to_string(), "coupling layers");
        kv("flow.hidden", list(&self.flow_hidden), "units per layer");
        kv("flow.embed_hidden", list(&self.embed_hidden), "units per layer");
        kv("flow.embed_dim", self.embed_dim.to_string(), "features");
        kv("flow.scale_bound", self.scale_bound.to_string(), "log-scale bound");
        let l = &self.adapt.lora;
        kv("lora.rank", l.rank.to_string(), "");
        kv("lora.alpha", l.alpha.to_string(), "");
        kv("lora.init_sigma", l.init_sigma.to_string(), "std of A");
        let g = &self.adapt.subspace;
        kv("subspace.snapshots", g.snapshots.to_string(), "mini-batches");
        kv("subspace.batch_size", g.batch_size.to_string(), "pairs, upper bound");
        match g.rank {
            RankSpec::Fixed { rank } => kv("subspace.rank", rank.to_string(), "directions"),
            RankSpec::Energy { tau } => kv("subspace.energy", tau.to_string(), "share of squared spectrum"),
        }
        let m = &self.mh;
        kv("mh.samples", m.n_samples.to_string(), "draws kept per chain");
        kv("mh.burn_in", m.burn_in.to_string(), "iterations");
        kv("mh.thin", m.thin.to_string(), "iterations per kept draw");
        kv("mh.step_fraction", m.step_fraction.to_string(), "of each prior width");
        kv("mh.adapt", m.adapt_burnin.to_string(), "");
        kv("mh.target_accept", m.target_accept.to_string(), "");
        kv("mh.chains", self.mh_chains.to_string(), "");
        kv("mh.rhat_threshold", self.rhat_threshold.to_string(), "");
        kv("reference.seed", self.reference_seed.to_string(), "");
        kv("eval.samples", self.eval_samples.to_string(), "draws per side");
        s
    }
}
