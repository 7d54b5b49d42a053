use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::sim::{BhConfig, BoxUniformPrior, Model, MvgbmConfig, Simulator, TimeSeries};

/// A named inference problem: simulator, prior, ground truth and, for
/// fine-tuning targets, the task whose checkpoint is adapted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub model: Model,
    pub prior_lower: Vec<f64>,
    pub prior_upper: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub pretrain_source: Option<String>,
}

pub const MVGBM_SIGMA: [f64; 9] = [0.5, 0.1, 0.0, 0.0, 0.1, 0.3, 0.0, 0.0, 0.2];

const OBSERVATION_BASE: u64 = 0x0b5e_7a7e;

fn bh(name: &str, beta: f64, theta: [f64; 4], source: Option<&str>) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        model: Model::Bh(BhConfig::with_beta(beta)),
        prior_lower: vec![0.0, 0.0, 0.0, -1.0],
        prior_upper: vec![1.0, 1.0, 1.0, 0.0],
        theta_star: theta.to_vec(),
        pretrain_source: source.map(Into::into),
    }
}

fn mvgbm(name: &str, theta: [f64; 3], source: Option<&str>) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        model: Model::Mvgbm(MvgbmConfig::unit_interval(MVGBM_SIGMA.to_vec(), 3, 100)),
        prior_lower: vec![-1.0; 3],
        prior_upper: vec![1.0; 3],
        theta_star: theta.to_vec(),
        pretrain_source: source.map(Into::into),
    }
}

pub fn builtin_tasks() -> Vec<TaskSpec> {
    vec![
        bh("bh_beta120", 120.0, [0.9, 0.2, 0.9, -0.2], None),
        bh("bh_beta60", 60.0, [0.9, 0.2, 0.9, -0.2], Some("bh_beta120")),
        bh("bh_beta60gtc", 60.0, [0.6, 0.4, 0.7, -0.3], Some("bh_beta120")),
        mvgbm("mvgbm", [0.2, -0.5, -0.1], None),
        mvgbm("mvgbmgtc", [0.6, -0.5, -0.2], Some("mvgbm")),
    ]
}

pub fn task(name: &str) -> Result<TaskSpec> {
    builtin_tasks()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| {
            let known: Vec<String> = builtin_tasks().into_iter().map(|t| t.name).collect();
            Error::InvalidConfig(format!("unknown task {name:?}, expected one of {}", known.join(", ")))
        })
}

impl TaskSpec {
    pub fn prior(&self) -> Result<BoxUniformPrior<f64>> {
        BoxUniformPrior::new(self.prior_lower.clone(), self.prior_upper.clone())
    }

    /// Seed of the task's observation, shared by every run on the task.
    pub fn observation_seed(&self) -> u64 {
        let index = self.name.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
        derive_seed(OBSERVATION_BASE, stream::OBSERVATION, index)
    }

    /// The observed series `y ~ p(x | θ*)`.
    pub fn observation(&self) -> Result<TimeSeries<f64>> {
        self.model.simulate(&self.theta_star.clone().into(), self.observation_seed())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let prior = self.prior()?;
        if Simulator::<f64>::theta_dim(&self.model) != prior.dim() || self.theta_star.len() != prior.dim() {
            return Err(Error::InvalidConfig(format!("task {}: parameter dimensions disagree", self.name)));
        }
        if !prior.contains(&self.theta_star) {
            return Err(Error::InvalidConfig(format!("task {}: ground truth outside the prior", self.name)));
        }
        Ok(())
    }
}
