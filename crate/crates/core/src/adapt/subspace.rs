//! Low-dimensional gradient subspaces identified from snapshot gradients.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::svd::{orthonormalize, thin_svd};
use crate::autodiff::{
    load_checkpoint, save_checkpoint, GradientHook, GradientVector, Matrix, ParamLayout, ParamStore,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SUBSPACE_FORMAT: &str = "sbi-ttt/subspace";

/// How many left singular vectors to keep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RankSpec {
    Fixed { rank: usize },
    /// Smallest rank whose share of `Σ σ²` reaches `tau`.
    Energy { tau: f64 },
}

impl Default for RankSpec {
    fn default() -> Self {
        RankSpec::Fixed { rank: 8 }
    }
}

/// Gradient snapshots `G = [g₁ … g_B]`, one column per mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrix<S> {
    columns: Vec<GradientVector<S>>,
}

impl<S: Scalar> SnapshotMatrix<S> {
    pub fn new(columns: Vec<GradientVector<S>>) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::InvalidConfig("snapshot matrix needs at least one column".into()));
        };
        if columns.iter().any(|c| c.len() != first.len()) {
            return Err(Error::Shape("snapshot columns differ in length".into()));
        }
        Ok(SnapshotMatrix { columns })
    }

    pub fn columns(&self) -> &[GradientVector<S>] {
        &self.columns
    }

    /// `(d, B)`
    pub fn shape(&self) -> (usize, usize) {
        (self.columns[0].len(), self.columns.len())
    }

    pub fn to_matrix(&self) -> Matrix<S> {
        let (d, b) = self.shape();
        Matrix::from_fn(d, b, |i, j| self.columns[j][i])
    }
}

/// `span(U_r)` with the spectrum it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSubspace<S> {
    /// Row `k` is the `k`-th basis vector.
    basis: Vec<Vec<S>>,
    singular_values: Vec<S>,
    energy_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct SubspaceHeader {
    rank: usize,
    dim: usize,
    energy_fraction: f64,
    singular_values: Vec<f64>,
}

pub fn compute_subspace<S: Scalar>(g: &SnapshotMatrix<S>, spec: RankSpec) -> Result<GradSubspace<S>> {
    let (_, b) = g.shape();
    if let RankSpec::Fixed { rank } = spec {
        if rank == 0 || rank > b {
            return Err(Error::InvalidConfig(format!(
                "rank {rank} must lie in 1..={b} for {b} snapshots"
            )));
        }
    }
    if let RankSpec::Energy { tau } = spec {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("energy threshold {tau} outside (0, 1]")));
        }
    }
    if g.columns.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("snapshot matrix".into()));
    }
    let cols: Vec<Vec<S>> = g.columns.iter().map(|c| c.0.clone()).collect();
    let (u, sigma) = thin_svd(&cols);
    let sq: Vec<f64> = sigma.iter().map(|s| s.as_f64().powi(2)).collect();
    let total: f64 = sq.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all snapshot gradients are zero".into()));
    }
    // Directions with negligible singular values carry no gradient information and
    // have no well-defined left vector, so the kept rank never exceeds the numerical rank.
    let cutoff = sigma[0].as_f64() * (b.max(g.shape().0) as f64) * f64::EPSILON;
    let numerical = sigma.iter().filter(|s| s.as_f64() > cutoff).count();
    let wanted = match spec {
        RankSpec::Fixed { rank } => rank,
        RankSpec::Energy { tau } => {
            let mut acc = 0.0;
            let mut r = sq.len();
            for (i, s) in sq.iter().enumerate() {
                acc += s;
                if acc / total >= tau {
                    r = i + 1;
                    break;
                }
            }
            r
        }
    };
    let r = wanted.min(numerical).max(1);
    let mut basis: Vec<Vec<S>> = u.into_iter().take(r).collect();
    orthonormalize(&mut basis);
    let energy_fraction = (sq[..r].iter().sum::<f64>() / total).min(1.0);
    Ok(GradSubspace {
        basis,
        singular_values: sigma,
        energy_fraction,
    })
}

impl<S: Scalar> GradSubspace<S> {
    /// A subspace spanned by the given vectors, orthonormalized.
    pub fn from_basis(mut vectors: Vec<Vec<S>>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::InvalidConfig("empty basis".into()));
        };
        let d = first.len();
        if vectors.iter().any(|v| v.len() != d) || vectors.len() > d {
            return Err(Error::Shape("basis vectors must share a length at least their count".into()));
        }
        orthonormalize(&mut vectors);
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("basis vectors are linearly dependent".into()));
        }
        let r = vectors.len();
        Ok(GradSubspace {
            basis: vectors,
            singular_values: vec![S::one(); r],
            energy_fraction: 1.0,
        })
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.basis[0].len()
    }

    pub fn basis(&self) -> &[Vec<S>] {
        &self.basis
    }

    pub fn singular_values(&self) -> &[S] {
        &self.singular_values
    }

    pub fn energy_fraction(&self) -> f64 {
        self.energy_fraction
    }

    /// `U_rᵀ g`
    pub fn coefficients(&self, g: &[S]) -> Vec<S> {
        assert_eq!(g.len(), self.dim(), "vector length");
        self.basis
            .iter()
            .map(|u| u.iter().zip(g).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `U_r c`
    pub fn expand(&self, c: &[S]) -> Vec<S> {
        assert_eq!(c.len(), self.rank(), "coefficient length");
        let mut out = vec![S::zero(); self.dim()];
        for (u, &ck) in self.basis.iter().zip(c) {
            for (o, &v) in out.iter_mut().zip(u) {
                *o += ck * v;
            }
        }
        out
    }

    /// Largest entry of `|U_rᵀ U_r − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                let d: S = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d.as_f64() - target).abs());
            }
        }
        worst
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SubspaceHeader {
            rank: self.rank(),
            dim: self.dim(),
            energy_fraction: self.energy_fraction,
            singular_values: self.singular_values.iter().map(|s| s.as_f64()).collect(),
        };
        let mut b = ParamLayout::builder();
        b.push("basis", self.rank(), self.dim());
        let mut store = ParamStore::zeros(b.build()?);
        store.flat_mut().copy_from_slice(&self.basis.concat());
        save_checkpoint(path, SUBSPACE_FORMAT, &header, &store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, store): (SubspaceHeader, ParamStore<S>) = load_checkpoint(path, SUBSPACE_FORMAT)?;
        if store.len() != h.rank * h.dim || h.rank == 0 {
            return Err(Error::format("subspace checkpoint", "basis size disagrees with header"));
        }
        Ok(GradSubspace {
            basis: store.flat().chunks(h.dim).map(|c| c.to_vec()).collect(),
            singular_values: h.singular_values.iter().map(|&s| S::lit(s)).collect(),
            energy_fraction: h.energy_fraction,
        })
    }
}

/// `U_r (U_rᵀ g)` as two thin products.
pub fn project_gradient<S: Scalar>(space: &GradSubspace<S>, g: &GradientVector<S>) -> GradientVector<S> {
    GradientVector(space.expand(&space.coefficients(g)))
}

impl<S: Scalar> GradientHook<S> for GradSubspace<S> {
    fn apply(&self, grad: GradientVector<S>) -> GradientVector<S> {
        project_gradient(self, &grad)
    }
}
