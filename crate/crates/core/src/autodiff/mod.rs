//! Reverse-mode differentiation, parameter storage and optimisation.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod source;
mod store;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use matrix::Matrix;
pub use mlp::{mlp_forward, Mlp};
pub use source::{Frozen, WeightSource};
pub use store::{BlockId, BlockSpec, GradientVector, LayoutBuilder, ParamLayout, ParamStore};
pub use tape::{GradientHook, Tape, Var};
