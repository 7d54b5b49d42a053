use std::sync::Arc;

use crate::autodiff::Frozen;
use crate::error::Result;
use crate::flow::{ConditionalFlow, Standardizer};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::sim::io::SimRecord;
use crate::sim::{BoxUniformPrior, ParameterVector, Simulator, TimeSeries};
use crate::snpe::{
    train_round, Dataset, Learner, LossKind, LossTrace, Proposal, RoundContext, RoundSchedule,
    TrainingData,
};

/// Whether the observation standardizer is fitted on the first round's data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StandardizerMode {
    FitRoundZero,
    Keep,
}

/// Everything a sequential run produced besides the learner's final weights.
#[derive(Clone, Debug)]
pub struct SnpeRun<S> {
    pub dataset: Dataset<S>,
    /// Proposal used in each round, starting with the prior.
    pub proposals: Vec<Proposal<S>>,
    pub traces: Vec<LossTrace>,
    /// Share of flow draws that fell inside the prior box, per round (1 for the prior).
    pub acceptance: Vec<f64>,
}

/// Draws `n` parameters from `proposal` restricted to the prior's support.
pub fn draw_from_proposal<S: Scalar>(
    flow: &ConditionalFlow,
    proposal: &Proposal<S>,
    prior: &BoxUniformPrior<S>,
    n: usize,
    seed: u64,
) -> Result<(Vec<ParameterVector<S>>, f64)> {
    match proposal {
        Proposal::Prior => Ok((prior.sample(n, seed), 1.0)),
        Proposal::FlowAtObservation { store, observation } => {
            let src = Frozen(store.as_ref());
            let e = flow.embed_observation(&src, observation)?;
            let b = flow.sample_in_box(&src, &e, n, prior, seed)?;
            Ok((b.samples, b.acceptance_rate))
        }
    }
}

/// Simulates `thetas` with per-pair seeds derived from `(seed, round, index)`.
pub fn simulate_round<S: Scalar>(
    simulator: &dyn Simulator<S>,
    thetas: Vec<ParameterVector<S>>,
    round: usize,
    seed: u64,
) -> Result<Vec<SimRecord<S>>> {
    thetas
        .into_iter()
        .enumerate()
        .map(|(i, theta)| {
            let s = derive_seed(seed, stream::SIMULATION, ((round as u64) << 32) | i as u64);
            Ok(SimRecord {
                x: simulator.simulate(&theta, s)?,
                theta,
                seed: s,
                round,
            })
        })
        .collect()
}

/// Runs the rounds of `schedule`: draw from the current proposal, simulate,
/// append, train on everything so far, and refresh the proposal at `y`.
#[allow(clippy::too_many_arguments)]
pub fn run_sequential<S: Scalar>(
    flow: &mut ConditionalFlow,
    learner: &mut dyn Learner<S>,
    simulator: &dyn Simulator<S>,
    prior: &BoxUniformPrior<S>,
    y: &TimeSeries<S>,
    schedule: &RoundSchedule,
    mode: StandardizerMode,
    seed: u64,
) -> Result<SnpeRun<S>> {
    schedule.validate()?;
    let mut run = SnpeRun {
        dataset: Dataset::new(),
        proposals: Vec::new(),
        traces: Vec::new(),
        acceptance: Vec::new(),
    };
    for (m, &n) in schedule.sims_per_round.iter().enumerate() {
        let mut round = || -> Result<()> {
            let proposal = if m == 0 {
                Proposal::Prior
            } else {
                Proposal::FlowAtObservation {
                    store: Arc::new(learner.effective()),
                    observation: y.clone(),
                }
            };
            let (thetas, rate) =
                draw_from_proposal(flow, &proposal, prior, n, derive_seed(seed, stream::PROPOSAL, m as u64))?;
            let records = simulate_round(simulator, thetas, m, seed)?;
            if m == 0 && mode == StandardizerMode::FitRoundZero {
                flow.set_standardizer(Standardizer::fit(records.iter().map(|r| &r.x))?)?;
            }
            run.dataset.append_round(m, records)?;
            run.proposals.push(proposal);
            run.acceptance.push(rate);

            let kind = LossKind::for_round(m, schedule.train.atoms);
            let train_seed = derive_seed(seed, stream::TRAINING, m as u64);
            learner.before_round(&RoundContext {
                flow,
                round: m,
                kind,
                dataset: &run.dataset,
                prior,
                train: &schedule.train,
                seed: train_seed,
            })?;
            let data = TrainingData::new(flow, run.dataset.records(), prior)?;
            let trace = train_round(flow, learner, &data, kind, &schedule.train, train_seed)?;
            run.traces.push(trace);
            Ok(())
        };
        round().map_err(|e| e.in_round(m))?;
    }
    Ok(run)
}
