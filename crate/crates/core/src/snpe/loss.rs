use rand::seq::index::sample as sample_indices;

use crate::autodiff::{Matrix, Tape, Var, WeightSource};
use crate::error::{Error, Result};
use crate::flow::ConditionalFlow;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::sim::io::SimRecord;
use crate::sim::BoxUniformPrior;

/// Which normalisation the round objective uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Proposal equals the prior: plain conditional negative log-likelihood.
    Nll,
    /// Contrastive normalisation over `atoms` parameters drawn from the batch.
    Atomic { atoms: usize },
}

impl LossKind {
    pub fn for_round(round: usize, atoms: usize) -> Self {
        if round == 0 {
            LossKind::Nll
        } else {
            LossKind::Atomic { atoms }
        }
    }
}

/// Pairs prepared for repeated batching: θ rows, standardized observation rows
/// and prior log densities.
pub struct TrainingData<S> {
    thetas: Matrix<S>,
    obs: Matrix<S>,
    log_prior: Vec<S>,
    origin: Vec<(usize, u64)>,
}

impl<S: Scalar> TrainingData<S> {
    pub fn new(flow: &ConditionalFlow, records: &[SimRecord<S>], prior: &BoxUniformPrior<S>) -> Result<Self> {
        let d = flow.theta_dim();
        let mut thetas = Matrix::zeros(records.len(), d);
        for (i, r) in records.iter().enumerate() {
            r.theta.expect_dim(d, "training data")?;
            thetas.row_mut(i).copy_from_slice(&r.theta);
        }
        let series: Vec<_> = records.iter().map(|r| &r.x).collect();
        Ok(TrainingData {
            obs: flow.standardize_rows(&series)?,
            log_prior: records.iter().map(|r| prior.log_prob(&r.theta)).collect(),
            origin: records.iter().map(|r| (r.round, r.seed)).collect(),
            thetas,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, i: usize) -> &[S] {
        self.thetas.row(i)
    }

    fn rows(m: &Matrix<S>, idx: impl Iterator<Item = usize>) -> Matrix<S> {
        let rows: Vec<usize> = idx.collect();
        let mut out = Matrix::zeros(rows.len(), m.cols());
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(k).copy_from_slice(m.row(i));
        }
        out
    }

    /// Human-readable identification of pair `i` for diagnostics.
    pub fn describe(&self, i: usize) -> String {
        let (round, seed) = self.origin[i];
        format!("θ = {:?} (round {round}, simulation seed {seed})", self.theta(i))
    }
}

/// Summed loss of a batch and its per-pair terms (n×1).
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub per_row: Var,
}

/// `Σ_i (log Σ_j exp(l_ij) − l_i0)` for logits `l` (n×M) whose first column holds the true atom.
pub fn atomic_loss_from_logits<S: Scalar>(tape: &mut Tape<S>, logits: Var) -> Result<BatchLoss> {
    if tape.shape(logits).1 < 2 {
        return Err(Error::InvalidConfig(
            "atomic normalisation needs at least two atoms".into(),
        ));
    }
    let lse = tape.log_sum_exp_rows(logits);
    let own = tape.slice_cols(logits, 0, 1)?;
    let per_row = tape.sub(lse, own)?;
    let total = tape.sum_all(per_row);
    Ok(BatchLoss { total, per_row })
}

/// Round objective on the pairs `batch` of `data`, summed over the batch.
///
/// Under [`LossKind::Atomic`] each pair is scored against itself plus `atoms − 1`
/// other parameters of the batch, drawn without replacement from `rng`, with
/// logits `log q(θ'|x) − log p(θ')`.
pub fn snpe_loss<S: Scalar>(
    tape: &mut Tape<S>,
    flow: &ConditionalFlow,
    src: &dyn WeightSource<S>,
    data: &TrainingData<S>,
    batch: &[usize],
    kind: LossKind,
    rng: &mut Rng,
) -> Result<BatchLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let obs = tape.constant(TrainingData::rows(&data.obs, batch.iter().copied()));
    let emb = flow.embed_graph(tape, src, obs)?;
    match kind {
        LossKind::Nll => {
            let th = tape.constant(TrainingData::rows(&data.thetas, batch.iter().copied()));
            let lp = flow.log_prob_graph(tape, src, th, emb)?;
            let per_row = tape.scale(lp, -S::one());
            let total = tape.sum_all(per_row);
            Ok(BatchLoss { total, per_row })
        }
        LossKind::Atomic { atoms } => {
            let m = atoms.min(n);
            if m < 2 {
                return Err(Error::InvalidConfig(format!(
                    "atomic loss needs at least two atoms, batch of {n} with {atoms} atoms gives {m}"
                )));
            }
            let mut atom_rows = Vec::with_capacity(n * m);
            for (i, &own) in batch.iter().enumerate() {
                if data.log_prior[own] == S::neg_infinity() {
                    return Err(Error::OutOfSupport(data.describe(own)));
                }
                atom_rows.push(own);
                for k in sample_indices(rng, n - 1, m - 1) {
                    atom_rows.push(batch[if k < i { k } else { k + 1 }]);
                }
            }
            let offsets: Vec<S> = atom_rows
                .iter()
                .map(|&r| {
                    let lp = data.log_prior[r];
                    if lp == S::neg_infinity() {
                        lp
                    } else {
                        -lp
                    }
                })
                .collect();
            let th = tape.constant(TrainingData::rows(&data.thetas, atom_rows.iter().copied()));
            let rep: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, m)).collect();
            let emb_rep = tape.gather_rows(emb, rep)?;
            let lq = flow.log_prob_graph(tape, src, th, emb_rep)?;
            let off = tape.constant(Matrix::column(offsets));
            let logits = tape.add(lq, off)?;
            let logits = tape.reshape(logits, n, m)?;
            atomic_loss_from_logits(tape, logits)
        }
    }
}
