//! Test-time adaptation of a pretrained flow: full fine-tuning, low-rank
//! adapters, and training restricted to a gradient subspace.

mod finetune;
mod learners;
pub mod lora;
mod snapshots;
mod subspace;
pub mod svd;

pub use finetune::{
    finetune, finetune_full, finetune_gradsubspace_pea, finetune_gradsubspace_ttt, finetune_lora, AdaptConfig,
    Adapted, Method,
};
pub use learners::{identify_subspace, PeaParams, ProjectedParams, SubspaceRecord};
pub use lora::{eligible_targets, lora_attach, LoraAdapter, LoraConfig};
pub use snapshots::{collect_gradient_snapshots, snapshot_batches, SubspaceConfig};
pub use subspace::{compute_subspace, project_gradient, GradSubspace, RankSpec, SnapshotMatrix};
