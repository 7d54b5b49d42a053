//! Sequential neural posterior estimation for agent-based models with
//! test-time adaptation of a pretrained flow.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod autodiff;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod mh;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod snpe;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// The default scalar. Everything generic over [`Scalar`] has an `f64` alias here.
pub type Real = f64;

pub type Params = autodiff::ParamStore<Real>;
pub type Gradient = autodiff::GradientVector<Real>;
pub type Theta = sim::ParameterVector<Real>;
pub type Series = sim::TimeSeries<Real>;
pub type Prior = sim::BoxUniformPrior<Real>;
pub type Record = sim::io::SimRecord<Real>;
pub type Data = snpe::Dataset<Real>;
pub type Run = snpe::SnpeRun<Real>;
pub type Lora = adapt::LoraAdapter<Real>;
pub type Subspace = adapt::GradSubspace<Real>;
pub type Snapshots = adapt::SnapshotMatrix<Real>;
pub type McmcChain = mh::Chain<Real>;
pub type McmcReference = mh::Reference<Real>;
