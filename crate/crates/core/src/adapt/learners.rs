use crate::adapt::snapshots::{collect_gradient_snapshots, snapshot_batches, SubspaceConfig};
use crate::adapt::subspace::{compute_subspace, GradSubspace, SnapshotMatrix};
use crate::autodiff::{GradientHook, GradientVector, ParamStore, WeightSource};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;
use crate::snpe::{Learner, RoundContext, TrainingData};

/// Summary of the subspace found in one round.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubspaceRecord {
    pub round: usize,
    pub rank: usize,
    pub energy_fraction: f64,
    pub singular_values: Vec<f64>,
}

/// Subspace of the round's fresh simulations, from gradients at `phi0`.
pub fn identify_subspace<S: Scalar>(
    ctx: &RoundContext<'_, S>,
    phi0: &ParamStore<S>,
    cfg: &SubspaceConfig,
) -> Result<(SnapshotMatrix<S>, GradSubspace<S>)> {
    let fresh = ctx.dataset.round(ctx.round);
    let data = TrainingData::new(ctx.flow, fresh, ctx.prior)?;
    let batches = snapshot_batches(
        data.len(),
        cfg.snapshots,
        cfg.batch_size,
        derive_seed(ctx.seed, stream::SNAPSHOT, u64::MAX),
    )?;
    let g = collect_gradient_snapshots(ctx.flow, phi0, &data, &batches, ctx.kind, ctx.seed)?;
    let space = compute_subspace(&g, cfg.rank)?;
    Ok((g, space))
}

fn record<S: Scalar>(round: usize, s: &GradSubspace<S>) -> SubspaceRecord {
    SubspaceRecord {
        round,
        rank: s.rank(),
        energy_fraction: s.energy_fraction(),
        singular_values: s.singular_values().iter().map(|v| v.as_f64()).collect(),
    }
}

/// All weights trainable, with every gradient projected onto the round's subspace.
#[derive(Clone, Debug)]
pub struct ProjectedParams<S> {
    store: ParamStore<S>,
    phi0: ParamStore<S>,
    config: SubspaceConfig,
    space: Option<GradSubspace<S>>,
    last_snapshots: Option<SnapshotMatrix<S>>,
    history: Vec<SubspaceRecord>,
}

impl<S: Scalar> ProjectedParams<S> {
    pub fn new(phi0: ParamStore<S>, config: SubspaceConfig) -> Result<Self> {
        config.validate()?;
        Ok(ProjectedParams {
            store: phi0.clone(),
            phi0,
            config,
            space: None,
            last_snapshots: None,
            history: Vec::new(),
        })
    }

    /// Uses `space` in every round instead of identifying one.
    pub fn with_fixed_subspace(phi0: ParamStore<S>, space: GradSubspace<S>) -> Result<Self> {
        if space.dim() != phi0.len() {
            return Err(Error::Shape(format!(
                "subspace of dimension {} for {} parameters",
                space.dim(),
                phi0.len()
            )));
        }
        let mut p = Self::new(phi0, SubspaceConfig::default())?;
        p.space = Some(space);
        p.config.snapshots = 0;
        Ok(p)
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn into_store(self) -> ParamStore<S> {
        self.store
    }

    pub fn subspace(&self) -> Option<&GradSubspace<S>> {
        self.space.as_ref()
    }

    pub fn last_snapshots(&self) -> Option<&SnapshotMatrix<S>> {
        self.last_snapshots.as_ref()
    }

    pub fn history(&self) -> &[SubspaceRecord] {
        &self.history
    }
}

impl<S: Scalar> Learner<S> for ProjectedParams<S> {
    fn trainable(&self) -> &[S] {
        self.store.flat()
    }

    fn trainable_mut(&mut self) -> &mut [S] {
        self.store.flat_mut()
    }

    fn source(&self) -> Box<dyn WeightSource<S> + '_> {
        Box::new(&self.store)
    }

    fn hooks(&self) -> Vec<&dyn GradientHook<S>> {
        match &self.space {
            Some(s) => vec![s as &dyn GradientHook<S>],
            None => Vec::new(),
        }
    }

    fn effective(&self) -> ParamStore<S> {
        self.store.clone()
    }

    fn before_round(&mut self, ctx: &RoundContext<'_, S>) -> Result<()> {
        if self.config.snapshots == 0 {
            return Ok(());
        }
        let (g, space) = identify_subspace(ctx, &self.phi0, &self.config)?;
        self.history.push(record(ctx.round, &space));
        self.space = Some(space);
        self.last_snapshots = Some(g);
        Ok(())
    }
}

/// `φ = φ₀ + U_r c` with only `c` trainable. `c` restarts at zero whenever the
/// subspace is re-identified.
#[derive(Clone, Debug)]
pub struct PeaParams<S> {
    phi0: ParamStore<S>,
    coeffs: Vec<S>,
    config: SubspaceConfig,
    space: Option<GradSubspace<S>>,
    last_snapshots: Option<SnapshotMatrix<S>>,
    history: Vec<SubspaceRecord>,
}

impl<S: Scalar> PeaParams<S> {
    pub fn new(phi0: ParamStore<S>, config: SubspaceConfig) -> Result<Self> {
        config.validate()?;
        Ok(PeaParams {
            phi0,
            coeffs: Vec::new(),
            config,
            space: None,
            last_snapshots: None,
            history: Vec::new(),
        })
    }

    pub fn coefficients(&self) -> &[S] {
        &self.coeffs
    }

    pub fn subspace(&self) -> Option<&GradSubspace<S>> {
        self.space.as_ref()
    }

    pub fn last_snapshots(&self) -> Option<&SnapshotMatrix<S>> {
        self.last_snapshots.as_ref()
    }

    pub fn history(&self) -> &[SubspaceRecord] {
        &self.history
    }

    pub fn phi0(&self) -> &ParamStore<S> {
        &self.phi0
    }

    fn materialize(&self) -> ParamStore<S> {
        let mut out = self.phi0.clone();
        if let Some(space) = &self.space {
            if self.coeffs.iter().any(|&c| c != S::zero()) {
                for (w, d) in out.flat_mut().iter_mut().zip(space.expand(&self.coeffs)) {
                    *w += d;
                }
            }
        }
        out
    }
}

impl<S: Scalar> Learner<S> for PeaParams<S> {
    fn trainable(&self) -> &[S] {
        &self.coeffs
    }

    fn trainable_mut(&mut self) -> &mut [S] {
        &mut self.coeffs
    }

    fn source(&self) -> Box<dyn WeightSource<S> + '_> {
        Box::new(self.materialize())
    }

    fn pull_back(&self, grad: GradientVector<S>) -> GradientVector<S> {
        match &self.space {
            Some(s) => GradientVector(s.coefficients(&grad)),
            None => GradientVector(Vec::new()),
        }
    }

    fn effective(&self) -> ParamStore<S> {
        self.materialize()
    }

    fn before_round(&mut self, ctx: &RoundContext<'_, S>) -> Result<()> {
        let (g, space) = identify_subspace(ctx, &self.phi0, &self.config)?;
        self.history.push(record(ctx.round, &space));
        self.coeffs = vec![S::zero(); space.rank()];
        self.space = Some(space);
        self.last_snapshots = Some(g);
        Ok(())
    }
}
