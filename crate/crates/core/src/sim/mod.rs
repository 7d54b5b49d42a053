//! Agent-based simulators with tractable transition densities.

pub mod bh;
pub mod io;
pub mod mvgbm;
mod prior;
mod series;
mod toy;

use serde::{Deserialize, Serialize};

pub use bh::BhConfig;
pub use mvgbm::MvgbmConfig;
pub use prior::BoxUniformPrior;
pub use series::{ModelTag, ParameterVector, TimeSeries};
pub use toy::GaussianToy;

use crate::error::Result;
use crate::scalar::Scalar;

/// A stochastic simulator `x ~ p(x | θ)` with a closed-form likelihood.
///
/// Implementations are pure functions of `(self, θ, seed)` and safe to share across threads.
pub trait Simulator<S: Scalar>: Send + Sync {
    fn tag(&self) -> ModelTag;
    fn theta_dim(&self) -> usize;
    /// `(steps, dims)` of every produced series.
    fn obs_shape(&self) -> (usize, usize);
    fn simulate(&self, theta: &ParameterVector<S>, seed: u64) -> Result<TimeSeries<S>>;
    fn loglik(&self, theta: &ParameterVector<S>, series: &TimeSeries<S>) -> Result<S>;
}

/// The built-in models, serializable for manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Bh(BhConfig),
    Mvgbm(MvgbmConfig),
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        match self {
            Model::Bh(c) => c.validate(),
            Model::Mvgbm(c) => c.validate(),
        }
    }
}

impl<S: Scalar> Simulator<S> for Model {
    fn tag(&self) -> ModelTag {
        match self {
            Model::Bh(_) => ModelTag::Bh,
            Model::Mvgbm(_) => ModelTag::Mvgbm,
        }
    }

    fn theta_dim(&self) -> usize {
        match self {
            Model::Bh(_) => bh::THETA_DIM,
            Model::Mvgbm(c) => c.dim,
        }
    }

    fn obs_shape(&self) -> (usize, usize) {
        match self {
            Model::Bh(c) => (c.horizon, 1),
            Model::Mvgbm(c) => (c.horizon, c.dim),
        }
    }

    fn simulate(&self, theta: &ParameterVector<S>, seed: u64) -> Result<TimeSeries<S>> {
        match self {
            Model::Bh(c) => bh::simulate(c, theta, seed),
            Model::Mvgbm(c) => mvgbm::simulate(c, theta, seed),
        }
    }

    fn loglik(&self, theta: &ParameterVector<S>, series: &TimeSeries<S>) -> Result<S> {
        match self {
            Model::Bh(c) => bh::loglik(c, theta, series),
            Model::Mvgbm(c) => mvgbm::loglik(c, theta, series),
        }
    }
}
