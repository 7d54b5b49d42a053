use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapt::subspace::{RankSpec, SnapshotMatrix};
use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::flow::ConditionalFlow;
use crate::rng::{derive_seed, seeded, stream};
use crate::scalar::Scalar;
use crate::snpe::{snpe_loss, LossKind, TrainingData};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceConfig {
    /// Number of snapshot mini-batches `B`.
    pub snapshots: usize,
    /// Upper bound on pairs per snapshot batch.
    pub batch_size: usize,
    pub rank: RankSpec,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            snapshots: 32,
            batch_size: 32,
            rank: RankSpec::default(),
        }
    }
}

impl SubspaceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("snapshot count and batch size must be positive".into()));
        }
        if let RankSpec::Fixed { rank } = self.rank {
            if rank == 0 || rank > self.snapshots {
                return Err(Error::InvalidConfig(format!(
                    "rank {rank} must lie in 1..={}",
                    self.snapshots
                )));
            }
        }
        Ok(())
    }
}

/// `count` disjoint batches of `min(max_size, ⌊n / count⌋)` indices out of `0..n`.
pub fn snapshot_batches(n: usize, count: usize, max_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if count == 0 || n < count {
        return Err(Error::InvalidConfig(format!(
            "{count} snapshot batches need at least {count} pairs, have {n}"
        )));
    }
    let size = max_size.min(n / count);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded(seed));
    Ok(idx.chunks(size).take(count).map(|c| c.to_vec()).collect())
}

/// One gradient of the mean batch loss at `phi0` per batch, in batch order.
pub fn collect_gradient_snapshots<S: Scalar>(
    flow: &ConditionalFlow,
    phi0: &ParamStore<S>,
    data: &TrainingData<S>,
    batches: &[Vec<usize>],
    kind: LossKind,
    seed: u64,
) -> Result<SnapshotMatrix<S>> {
    let mut columns = Vec::with_capacity(batches.len());
    for (b, batch) in batches.iter().enumerate() {
        let mut rng = seeded(derive_seed(seed, stream::SNAPSHOT, b as u64));
        let mut tape = Tape::new(phi0.len());
        let loss = snpe_loss(&mut tape, flow, phi0, data, batch, kind, &mut rng)?;
        let mean = tape.scale(loss.total, S::from_usize_lossy(batch.len()).recip());
        let g = tape.backward(mean)?;
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("snapshot gradient of batch {b}")));
        }
        columns.push(g);
    }
    SnapshotMatrix::new(columns)
}
