use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, GradientHook, GradientVector, ParamStore, Tape, WeightSource};
use crate::error::{Error, Result};
use crate::flow::ConditionalFlow;
use crate::rng::{derive_seed, seeded, stream};
use crate::scalar::Scalar;
use crate::sim::BoxUniformPrior;
use crate::snpe::{snpe_loss, Dataset, LossKind, TrainConfig, TrainingData};

/// What one round of training needs to know besides the data itself.
pub struct RoundContext<'a, S> {
    pub flow: &'a ConditionalFlow,
    pub round: usize,
    pub kind: LossKind,
    pub dataset: &'a Dataset<S>,
    pub prior: &'a BoxUniformPrior<S>,
    pub train: &'a TrainConfig,
    pub seed: u64,
}

/// A trainable parameterization of the flow weights.
///
/// The optimizer sees only `trainable()`. Gradients come back from the tape in
/// the coordinates of `source().param_dim()`, pass through `hooks()`, and are
/// mapped onto the trainable coordinates by `pull_back`.
pub trait Learner<S: Scalar> {
    fn trainable(&self) -> &[S];
    fn trainable_mut(&mut self) -> &mut [S];
    fn source(&self) -> Box<dyn WeightSource<S> + '_>;

    fn hooks(&self) -> Vec<&dyn GradientHook<S>> {
        Vec::new()
    }

    fn pull_back(&self, grad: GradientVector<S>) -> GradientVector<S> {
        grad
    }

    /// The flow weights the current trainable values stand for.
    fn effective(&self) -> ParamStore<S>;

    fn before_round(&mut self, _ctx: &RoundContext<'_, S>) -> Result<()> {
        Ok(())
    }
}

/// All flow weights trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct FullParams<S> {
    store: ParamStore<S>,
}

impl<S: Scalar> FullParams<S> {
    pub fn new(store: ParamStore<S>) -> Self {
        FullParams { store }
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn into_store(self) -> ParamStore<S> {
        self.store
    }
}

impl<S: Scalar> Learner<S> for FullParams<S> {
    fn trainable(&self) -> &[S] {
        self.store.flat()
    }

    fn trainable_mut(&mut self) -> &mut [S] {
        self.store.flat_mut()
    }

    fn source(&self) -> Box<dyn WeightSource<S> + '_> {
        Box::new(&self.store)
    }

    fn effective(&self) -> ParamStore<S> {
        self.store.clone()
    }
}

/// Per-epoch mean losses. `val[0]` is measured before the first step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub best_epoch: usize,
}

impl LossTrace {
    pub fn epochs(&self) -> usize {
        self.train.len()
    }
}

fn batches(idx: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = idx.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.len() - 1;
        let start = idx.len() - out[tail].len() - out[tail - 1].len();
        out.truncate(tail - 1);
        out.push(&idx[start..]);
    }
    out
}

fn non_finite(data: &TrainingData<impl Scalar>, tape: &Tape<impl Scalar>, loss: &crate::snpe::BatchLoss, batch: &[usize]) -> Error {
    let rows = tape.value(loss.per_row).data();
    let at = rows.iter().position(|v| !v.is_finite()).unwrap_or(0);
    Error::NonFinite(format!("training loss for {}", data.describe(batch[at])))
}

/// Mean per-pair loss over `idx` without gradients. Atoms are drawn from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_loss<S: Scalar>(
    flow: &ConditionalFlow,
    src: &dyn WeightSource<S>,
    data: &TrainingData<S>,
    idx: &[usize],
    kind: LossKind,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidConfig("no pairs to evaluate".into()));
    }
    let mut rng = seeded(seed);
    let mut sum = 0.0;
    for b in batches(idx, batch_size) {
        let mut tape = Tape::new(src.param_dim());
        let loss = snpe_loss(&mut tape, flow, src, data, b, kind, &mut rng)?;
        let v = tape.scalar(loss.total).as_f64();
        if !v.is_finite() {
            return Err(non_finite(data, &tape, &loss, b));
        }
        sum += v;
    }
    Ok(sum / idx.len() as f64)
}

/// Mini-batch Adam on the round objective with validation early stopping.
/// The learner ends at the best validation point seen, or at the last step when
/// validation is disabled.
pub fn train_round<S: Scalar>(
    flow: &ConditionalFlow,
    learner: &mut dyn Learner<S>,
    data: &TrainingData<S>,
    kind: LossKind,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LossTrace> {
    cfg.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::InvalidConfig("training needs at least two pairs".into()));
    }
    let mut rng = seeded(derive_seed(seed, stream::TRAINING, 0));
    let val_seed = derive_seed(seed, stream::TRAINING, 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction > 0.0 && n >= 10 {
        ((n as f64 * cfg.val_fraction).round() as usize).max(2)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), learner.trainable().len());
    let mut trace = LossTrace::default();
    let mut best = learner.trainable().to_vec();
    let mut best_val = f64::INFINITY;
    if n_val > 0 {
        best_val = evaluate_loss(flow, &*learner.source(), data, &val_idx, kind, cfg.batch_size, val_seed)?;
        trace.val.push(best_val);
    }
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for b in batches(&train_idx, cfg.batch_size) {
            let grad = {
                let src = learner.source();
                let mut tape = Tape::new(src.param_dim());
                let loss = snpe_loss(&mut tape, flow, &*src, data, b, kind, &mut rng)?;
                let total = tape.scalar(loss.total);
                if !total.is_finite() {
                    return Err(non_finite(data, &tape, &loss, b));
                }
                sum += total.as_f64();
                let mean = tape.scale(loss.total, S::from_usize_lossy(b.len()).recip());
                let hooks = learner.hooks();
                learner.pull_back(tape.backward_with(mean, &hooks)?)
            };
            adam.step(learner.trainable_mut(), &grad)?;
        }
        trace.train.push(sum / train_idx.len() as f64);
        if n_val > 0 {
            let v = evaluate_loss(flow, &*learner.source(), data, &val_idx, kind, cfg.batch_size, val_seed)?;
            trace.val.push(v);
            if v < best_val {
                best_val = v;
                best.copy_from_slice(learner.trainable());
                trace.best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        } else {
            trace.best_epoch = epoch;
        }
    }
    if n_val > 0 {
        learner.trainable_mut().copy_from_slice(&best);
    }
    Ok(trace)
}
