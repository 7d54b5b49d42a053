//! Sequential neural posterior estimation: proposal-corrected rounds of
//! simulation and flow training around a fixed observation.

mod loss;
mod run;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::io::SimRecord;
use crate::sim::TimeSeries;

pub use loss::{atomic_loss_from_logits, snpe_loss, BatchLoss, LossKind, TrainingData};
pub use run::{draw_from_proposal, run_sequential, simulate_round, SnpeRun, StandardizerMode};
pub use train::{evaluate_loss, train_round, FullParams, Learner, LossTrace, RoundContext};

/// Every simulated pair so far, in round order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<S> {
    records: Vec<SimRecord<S>>,
    round_starts: Vec<usize>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new() -> Self {
        Dataset {
            records: Vec::new(),
            round_starts: Vec::new(),
        }
    }

    /// Rebuilds a dataset from stored records whose rounds run 0, 1, … without gaps.
    pub fn from_records(records: Vec<SimRecord<S>>) -> Result<Self> {
        let mut ds = Dataset::new();
        let mut start = 0;
        while start < records.len() {
            let round = records[start].round;
            let end = records[start..]
                .iter()
                .position(|r| r.round != round)
                .map_or(records.len(), |k| start + k);
            ds.append_round(round, records[start..end].to_vec())?;
            start = end;
        }
        Ok(ds)
    }

    /// Appends the pairs simulated in `round`, which must be the next round.
    pub fn append_round(&mut self, round: usize, pairs: Vec<SimRecord<S>>) -> Result<()> {
        if round != self.round_starts.len() {
            return Err(Error::InvalidConfig(format!(
                "dataset holds {} rounds, cannot append round {round}",
                self.round_starts.len()
            )));
        }
        if pairs.is_empty() {
            return Err(Error::InvalidConfig("a round needs at least one pair".into()));
        }
        let reference = self.records.first().or(pairs.first()).map(|r| {
            (r.theta.dim(), r.x.tag(), r.x.steps(), r.x.dims())
        });
        for p in &pairs {
            if Some((p.theta.dim(), p.x.tag(), p.x.steps(), p.x.dims())) != reference {
                return Err(Error::Shape("pairs differ in model or dimensions".into()));
            }
            if p.round != round {
                return Err(Error::InvalidConfig(format!(
                    "pair labelled round {} appended as round {round}",
                    p.round
                )));
            }
        }
        self.round_starts.push(self.records.len());
        self.records.extend(pairs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rounds(&self) -> usize {
        self.round_starts.len()
    }

    pub fn records(&self) -> &[SimRecord<S>] {
        &self.records
    }

    pub fn round(&self, m: usize) -> &[SimRecord<S>] {
        let start = self.round_starts[m];
        let end = self.round_starts.get(m + 1).copied().unwrap_or(self.records.len());
        &self.records[start..end]
    }
}

/// Distribution the parameters of one round were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub enum Proposal<S> {
    Prior,
    /// The flow posterior at the observation, frozen at the time it was issued.
    FlowAtObservation {
        store: Arc<ParamStore<S>>,
        observation: TimeSeries<S>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Share of the data held out for validation; 0 disables early stopping.
    pub val_fraction: f64,
    /// Contrastive atoms per pair in rounds after the first.
    pub atoms: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            batch_size: 50,
            max_epochs: 500,
            patience: 20,
            val_fraction: 0.1,
            atoms: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("training: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2");
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 0.5)");
        }
        if self.atoms < 2 {
            return bad("at least two atoms are needed after the first round");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSchedule {
    pub sims_per_round: Vec<usize>,
    pub train: TrainConfig,
}

impl RoundSchedule {
    pub fn new(sims_per_round: Vec<usize>) -> Self {
        RoundSchedule {
            sims_per_round,
            train: TrainConfig::default(),
        }
    }

    /// `[500, 500, 500, 1000]`.
    pub fn standard() -> Self {
        Self::new(vec![500, 500, 500, 1000])
    }

    pub fn validate(&self) -> Result<()> {
        if self.sims_per_round.is_empty() || self.sims_per_round.contains(&0) {
            return Err(Error::InvalidConfig(
                "simulation counts must be a non-empty list of positive integers".into(),
            ));
        }
        self.train.validate()
    }
}
