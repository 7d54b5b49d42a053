use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::learners::{PeaParams, ProjectedParams, SubspaceRecord};
use crate::adapt::lora::{eligible_targets, lora_attach, LoraAdapter, LoraConfig};
use crate::adapt::snapshots::SubspaceConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::flow::ConditionalFlow;
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::sim::{BoxUniformPrior, Simulator, TimeSeries};
use crate::snpe::{run_sequential, FullParams, RoundSchedule, SnpeRun, StandardizerMode};

/// How a pretrained flow is carried over to a shifted task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// The pretrained flow as is.
    #[serde(rename = "snpe")]
    Snpe,
    #[serde(rename = "ttt")]
    Ttt,
    #[serde(rename = "lora")]
    Lora,
    #[serde(rename = "gs-ttt")]
    GsTtt,
    #[serde(rename = "gs-pea")]
    GsPea,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Snpe, Method::Ttt, Method::Lora, Method::GsTtt, Method::GsPea];

    pub fn name(self) -> &'static str {
        match self {
            Method::Snpe => "snpe",
            Method::Ttt => "ttt",
            Method::Lora => "lora",
            Method::GsTtt => "gs-ttt",
            Method::GsPea => "gs-pea",
        }
    }

    /// Label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Method::Snpe => "SNPE",
            Method::Ttt => "SNPE-TTT",
            Method::Lora => "SNPE-LoRA",
            Method::GsTtt => "GradSubspace-TTT",
            Method::GsPea => "GradSubspace-PEA",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lora: LoraConfig,
    pub subspace: SubspaceConfig,
}

/// Outcome of adapting a pretrained flow.
#[derive(Clone, Debug)]
pub struct Adapted<S> {
    pub method: Method,
    /// Flow weights to sample from.
    pub store: ParamStore<S>,
    /// `None` for [`Method::Snpe`], which runs no rounds.
    pub run: Option<SnpeRun<S>>,
    pub trainable_dim: usize,
    pub adapter: Option<LoraAdapter<S>>,
    pub subspaces: Vec<SubspaceRecord>,
}

/// Every weight trainable, starting from `phi0`.
#[allow(clippy::too_many_arguments)]
pub fn finetune_full<S: Scalar>(
    flow: &mut ConditionalFlow,
    phi0: &ParamStore<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    seed: u64,
) -> Result<(ParamStore<S>, SnpeRun<S>)> {
    check(flow, phi0, simulator)?;
    let mut learner = FullParams::new(phi0.clone());
    let run = run_sequential(flow, &mut learner, simulator, prior, y, schedule, StandardizerMode::Keep, seed)?;
    Ok((learner.into_store(), run))
}

/// Only the adapter matrices trainable.
#[allow(clippy::too_many_arguments)]
pub fn finetune_lora<S: Scalar>(
    flow: &mut ConditionalFlow,
    mut adapter: LoraAdapter<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    seed: u64,
) -> Result<(LoraAdapter<S>, SnpeRun<S>)> {
    check(flow, adapter.base(), simulator)?;
    let run = run_sequential(flow, &mut adapter, simulator, prior, y, schedule, StandardizerMode::Keep, seed)?;
    Ok((adapter, run))
}

#[allow(clippy::too_many_arguments)]
pub fn finetune_gradsubspace_ttt<S: Scalar>(
    flow: &mut ConditionalFlow,
    phi0: &ParamStore<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    config: &SubspaceConfig,
    seed: u64,
) -> Result<(ProjectedParams<S>, SnpeRun<S>)> {
    check(flow, phi0, simulator)?;
    let mut learner = ProjectedParams::new(phi0.clone(), config.clone())?;
    let run = run_sequential(flow, &mut learner, simulator, prior, y, schedule, StandardizerMode::Keep, seed)?;
    Ok((learner, run))
}

#[allow(clippy::too_many_arguments)]
pub fn finetune_gradsubspace_pea<S: Scalar>(
    flow: &mut ConditionalFlow,
    phi0: &ParamStore<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    config: &SubspaceConfig,
    seed: u64,
) -> Result<(PeaParams<S>, SnpeRun<S>)> {
    check(flow, phi0, simulator)?;
    let mut learner = PeaParams::new(phi0.clone(), config.clone())?;
    let run = run_sequential(flow, &mut learner, simulator, prior, y, schedule, StandardizerMode::Keep, seed)?;
    Ok((learner, run))
}

/// Dispatches to the fine-tuning routine of `method`.
#[allow(clippy::too_many_arguments)]
pub fn finetune<S: Scalar>(
    method: Method,
    flow: &mut ConditionalFlow,
    phi0: &ParamStore<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    config: &AdaptConfig,
    seed: u64,
) -> Result<Adapted<S>> {
    check(flow, phi0, simulator)?;
    let mut out = Adapted {
        method,
        store: phi0.clone(),
        run: None,
        trainable_dim: 0,
        adapter: None,
        subspaces: Vec::new(),
    };
    match method {
        Method::Snpe => {}
        Method::Ttt => {
            let (store, run) = finetune_full(flow, phi0, simulator, prior, y, schedule, seed)?;
            out.trainable_dim = store.len();
            out.store = store;
            out.run = Some(run);
        }
        Method::Lora => {
            let targets = eligible_targets(phi0, &flow.weight_blocks(), config.lora.rank);
            let adapter = lora_attach(phi0, &targets, &config.lora, derive_seed(seed, stream::LORA, 0))?;
            let (adapter, run) = finetune_lora(flow, adapter, simulator, prior, y, schedule, seed)?;
            out.trainable_dim = adapter.trainable_count();
            out.store = adapter.merged();
            out.adapter = Some(adapter);
            out.run = Some(run);
        }
        Method::GsTtt => {
            let (learner, run) =
                finetune_gradsubspace_ttt(flow, phi0, simulator, prior, y, schedule, &config.subspace, seed)?;
            out.trainable_dim = learner.store().len();
            out.subspaces = learner.history().to_vec();
            out.store = learner.into_store();
            out.run = Some(run);
        }
        Method::GsPea => {
            let (learner, run) =
                finetune_gradsubspace_pea(flow, phi0, simulator, prior, y, schedule, &config.subspace, seed)?;
            out.trainable_dim = learner.coefficients().len();
            out.subspaces = learner.history().to_vec();
            out.store = crate::snpe::Learner::effective(&learner);
            out.run = Some(run);
        }
    }
    Ok(out)
}

fn check<S: Scalar>(flow: &ConditionalFlow, phi0: &ParamStore<S>, simulator: &dyn Simulator<S>) -> Result<()> {
    phi0.ensure_same_layout(flow.layout())?;
    let c = flow.config();
    if simulator.theta_dim() != c.theta_dim || simulator.obs_shape() != (c.obs_steps, c.obs_dims) {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects θ in R^{} and {}×{} series, simulator gives R^{} and {:?}",
            c.theta_dim,
            c.obs_steps,
            c.obs_dims,
            simulator.theta_dim(),
            simulator.obs_shape()
        )));
    }
    Ok(())
}
