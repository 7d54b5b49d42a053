//! Low-rank adapters: each target weight becomes `W₀ + (α/r) B A` with `W₀`
//! frozen, `A` (r×k) drawn from N(0, σ²) and `B` (d×r) starting at zero.

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, BlockId, Matrix, ParamLayout, ParamStore, Tape, Var,
    WeightSource,
};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::snpe::Learner;

pub const LORA_FORMAT: &str = "sbi-ttt/lora";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub init_sigma: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 8.0,
            init_sigma: 0.01,
        }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Target {
    base: BlockId,
    a: BlockId,
    b: BlockId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter<S> {
    base: Arc<ParamStore<S>>,
    config: LoraConfig,
    targets: Vec<Target>,
    by_base: Vec<Option<usize>>,
    adapter: ParamStore<S>,
}

#[derive(Serialize, Deserialize)]
struct LoraHeader {
    config: LoraConfig,
    targets: Vec<String>,
}

/// Weight matrices among `candidates` whose smaller side is at least `rank`.
pub fn eligible_targets<S: Scalar>(base: &ParamStore<S>, candidates: &[BlockId], rank: usize) -> Vec<BlockId> {
    candidates
        .iter()
        .copied()
        .filter(|&id| {
            let b = base.layout().block(id);
            b.rows.min(b.cols) >= rank
        })
        .collect()
}

/// Wraps `base` with zero-initialised adapters on `targets`.
pub fn lora_attach<S: Scalar>(
    base: &ParamStore<S>,
    targets: &[BlockId],
    config: &LoraConfig,
    seed: u64,
) -> Result<LoraAdapter<S>> {
    if config.rank == 0 || !(config.alpha > 0.0) || !(config.init_sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("bad LoRA settings {config:?}")));
    }
    if targets.is_empty() {
        return Err(Error::InvalidConfig("LoRA needs at least one target block".into()));
    }
    let layout = base.layout();
    let mut builder = ParamLayout::builder();
    for &id in targets {
        let b = layout.block(id);
        if b.rows == 1 {
            return Err(Error::InvalidConfig(format!(
                "{} is a bias vector, not a weight matrix",
                b.name
            )));
        }
        if config.rank > b.rows.min(b.cols) {
            return Err(Error::InvalidConfig(format!(
                "rank {} exceeds min({}, {}) for {}",
                config.rank, b.rows, b.cols, b.name
            )));
        }
        builder.push(format!("{}.lora_a", b.name), config.rank, b.cols);
        builder.push(format!("{}.lora_b", b.name), b.rows, config.rank);
    }
    let adapter_layout = builder.build()?;
    let mut adapter = ParamStore::zeros(adapter_layout.clone());
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, config.init_sigma)
        .map_err(|e| Error::InvalidConfig(format!("LoRA init: {e}")))?;
    let mut out_targets = Vec::new();
    let mut by_base = vec![None; layout.blocks().len()];
    for (k, &id) in targets.iter().enumerate() {
        if by_base[id.0].is_some() {
            return Err(Error::InvalidConfig(format!(
                "{} targeted twice",
                layout.block(id).name
            )));
        }
        let name = &layout.block(id).name;
        let a = adapter_layout.id(&format!("{name}.lora_a"))?;
        let b = adapter_layout.id(&format!("{name}.lora_b"))?;
        for v in adapter.block_mut(a) {
            *v = S::lit(normal.sample(&mut rng));
        }
        by_base[id.0] = Some(k);
        out_targets.push(Target { base: id, a, b });
    }
    Ok(LoraAdapter {
        base: Arc::new(base.clone()),
        config: config.clone(),
        targets: out_targets,
        by_base,
        adapter,
    })
}

impl<S: Scalar> LoraAdapter<S> {
    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    pub fn base(&self) -> &ParamStore<S> {
        &self.base
    }

    pub fn adapter(&self) -> &ParamStore<S> {
        &self.adapter
    }

    pub fn target_blocks(&self) -> Vec<BlockId> {
        self.targets.iter().map(|t| t.base).collect()
    }

    /// `Σ r (d + k)` over the targets.
    pub fn trainable_count(&self) -> usize {
        self.adapter.len()
    }

    /// `(α/r) B A` for a targeted base block.
    pub fn delta(&self, block: BlockId) -> Option<Matrix<S>> {
        let t = &self.targets[(*self.by_base.get(block.0)?)?];
        let ba = self
            .adapter
            .block_matrix(t.b)
            .matmul(&self.adapter.block_matrix(t.a))
            .expect("adapter shapes");
        let k = S::lit(self.config.scaling());
        Some(ba.map(|v| v * k))
    }

    /// Base weights with every update folded in.
    pub fn merged(&self) -> ParamStore<S> {
        let mut out = (*self.base).clone();
        for t in &self.targets {
            let delta = self.delta(t.base).expect("target");
            for (w, d) in out.block_mut(t.base).iter_mut().zip(delta.data()) {
                *w += *d;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let layout = self.base.layout();
        let header = LoraHeader {
            config: self.config.clone(),
            targets: self.targets.iter().map(|t| layout.block(t.base).name.clone()).collect(),
        };
        save_checkpoint(path, LORA_FORMAT, &header, &self.adapter)
    }

    /// Restores trained adapters on top of `base`.
    pub fn load(path: &Path, base: &ParamStore<S>) -> Result<Self> {
        let (header, stored): (LoraHeader, ParamStore<S>) = load_checkpoint(path, LORA_FORMAT)?;
        let targets = header
            .targets
            .iter()
            .map(|n| base.layout().id(n))
            .collect::<Result<Vec<_>>>()?;
        let mut adapter = lora_attach(base, &targets, &header.config, 0)?;
        adapter.adapter.ensure_same_layout(stored.layout())?;
        adapter.adapter.flat_mut().copy_from_slice(stored.flat());
        Ok(adapter)
    }
}

impl<S: Scalar> WeightSource<S> for LoraAdapter<S> {
    fn layout(&self) -> &Arc<ParamLayout> {
        self.base.layout()
    }

    fn param_dim(&self) -> usize {
        self.adapter.len()
    }

    fn bind(&self, tape: &mut Tape<S>, block: BlockId) -> Result<Var> {
        let w0 = tape.constant(self.base.block_matrix(block));
        let Some(k) = self.by_base[block.0] else {
            return Ok(w0);
        };
        let t = &self.targets[k];
        let a = self.adapter.bind(tape, t.a)?;
        let b = self.adapter.bind(tape, t.b)?;
        let ba = tape.matmul(b, a)?;
        let scaled = tape.scale(ba, S::lit(self.config.scaling()));
        tape.add(w0, scaled)
    }
}

impl<S: Scalar> Learner<S> for LoraAdapter<S> {
    fn trainable(&self) -> &[S] {
        self.adapter.flat()
    }

    fn trainable_mut(&mut self) -> &mut [S] {
        self.adapter.flat_mut()
    }

    fn source(&self) -> Box<dyn WeightSource<S> + '_> {
        Box::new(self)
    }

    fn effective(&self) -> ParamStore<S> {
        self.merged()
    }
}
