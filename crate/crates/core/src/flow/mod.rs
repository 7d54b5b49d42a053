//! Conditional normalizing flow `q_φ(θ | x)` built from affine coupling layers.
//!
//! Layer `k` leaves the coordinates with mask 1 unchanged and maps the rest as
//! `y = x · exp(s) + t`, where `(s_raw, t)` come from a conditioner network fed
//! `[m ⊙ x ‖ e]` and `s = B tanh(s_raw / B)` bounds the log-scale. The
//! observation enters through an embedding network applied to the standardized series.

use std::path::Path;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, BlockId, Frozen, Matrix, Mlp, ParamLayout, ParamStore, Tape,
    Var, WeightSource,
};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::{ln_two_pi, Scalar};
use crate::sim::{BoxUniformPrior, ParameterVector, TimeSeries};

pub const FLOW_FORMAT: &str = "sbi-ttt/flow";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub theta_dim: usize,
    /// Rows of the conditioning series.
    pub obs_steps: usize,
    /// Columns of the conditioning series.
    pub obs_dims: usize,
    pub n_layers: usize,
    /// Hidden widths of every coupling conditioner.
    pub hidden: Vec<usize>,
    /// Hidden widths of the embedding network.
    pub embed_hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Bound on each log-scale.
    pub scale_bound: f64,
}

impl FlowConfig {
    pub fn new(theta_dim: usize, obs_steps: usize, obs_dims: usize) -> Self {
        FlowConfig {
            theta_dim,
            obs_steps,
            obs_dims,
            n_layers: 5,
            hidden: vec![64, 64],
            embed_hidden: vec![64, 64],
            embed_dim: 32,
            scale_bound: 3.0,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.obs_steps * self.obs_dims
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("flow: {m}")));
        if self.theta_dim == 0 || self.obs_len() == 0 || self.embed_dim == 0 {
            return bad("dimensions must be positive");
        }
        if self.n_layers < 2 {
            return bad("at least two coupling layers are needed to transform every coordinate");
        }
        if self.hidden.contains(&0) || self.embed_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.scale_bound > 0.0 && self.scale_bound.is_finite()) {
            return bad("scale bound must be positive");
        }
        Ok(())
    }
}

/// Per-feature affine normalisation of flattened series, fixed after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub const MIN_STD: f64 = 1e-8;

    pub fn identity(len: usize) -> Self {
        Standardizer {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn fit<'a, S: Scalar + 'a>(series: impl IntoIterator<Item = &'a TimeSeries<S>>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        for s in series {
            let v = s.values();
            if n == 0 {
                sum = vec![0.0; v.len()];
                sq = vec![0.0; v.len()];
            } else if v.len() != sum.len() {
                return Err(Error::Shape("series of different lengths".into()));
            }
            for (j, &x) in v.iter().enumerate() {
                let x = x.as_f64();
                sum[j] += x;
                sq[j] += x * x;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidConfig("cannot fit a standardizer to no data".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0).sqrt().max(Self::MIN_STD))
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply<S: Scalar>(&self, values: &[S], out: &mut [S]) {
        for (((o, &x), &m), &s) in out.iter_mut().zip(values).zip(&self.mean).zip(&self.std) {
            *o = (x - S::lit(m)) / S::lit(s);
        }
    }
}

/// Summary vector of an observation produced by the embedding network.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<S>(pub Vec<S>);

/// Draws that landed inside a prior box, with the observed acceptance rate.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSample<S> {
    pub samples: Vec<ParameterVector<S>>,
    pub acceptance_rate: f64,
    pub draws: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FlowHeader {
    config: FlowConfig,
    standardizer: Standardizer,
}

#[derive(Clone, Debug)]
pub struct ConditionalFlow {
    config: FlowConfig,
    standardizer: Standardizer,
    layout: Arc<ParamLayout>,
    embed: Mlp,
    conditioners: Vec<Mlp>,
    masks: Vec<Vec<bool>>,
}

const SAMPLE_BUDGET: usize = 1_000_000;
const MIN_ACCEPTANCE: f64 = 1e-4;

impl ConditionalFlow {
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let d = config.theta_dim;
        let mut b = ParamLayout::builder();
        let mut sizes = vec![config.obs_len()];
        sizes.extend(&config.embed_hidden);
        sizes.push(config.embed_dim);
        Mlp::declare(&mut b, "embed", &sizes);
        for k in 0..config.n_layers {
            let mut sizes = vec![d + config.embed_dim];
            sizes.extend(&config.hidden);
            sizes.push(2 * d);
            Mlp::declare(&mut b, &format!("coupling{k}"), &sizes);
        }
        let layout = b.build()?;
        let embed = Mlp::from_layout(&layout, "embed")?;
        let conditioners = (0..config.n_layers)
            .map(|k| Mlp::from_layout(&layout, &format!("coupling{k}")))
            .collect::<Result<_>>()?;
        let masks = (0..config.n_layers)
            .map(|k| (0..d).map(|j| (j + k) % 2 == 0).collect())
            .collect();
        Ok(ConditionalFlow {
            standardizer: Standardizer::identity(config.obs_len()),
            config,
            layout,
            embed,
            conditioners,
            masks,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn theta_dim(&self) -> usize {
        self.config.theta_dim
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    pub fn set_standardizer(&mut self, st: Standardizer) -> Result<()> {
        if st.len() != self.config.obs_len() {
            return Err(Error::Shape(format!(
                "standardizer covers {} features, observations have {}",
                st.len(),
                self.config.obs_len()
            )));
        }
        self.standardizer = st;
        Ok(())
    }

    /// `true` marks coordinates layer `k` passes through unchanged.
    pub fn mask(&self, k: usize) -> &[bool] {
        &self.masks[k]
    }

    /// Every weight matrix (biases excluded), embedding first.
    pub fn weight_blocks(&self) -> Vec<BlockId> {
        self.embed
            .weight_blocks()
            .chain(self.conditioners.iter().flat_map(|c| c.weight_blocks()))
            .collect()
    }

    /// Random hidden layers and zeroed conditioner outputs: the flow starts as the identity map.
    pub fn init_store<S: Scalar>(&self, seed: u64) -> ParamStore<S> {
        self.init_store_with(seed, true)
    }

    pub fn init_store_with<S: Scalar>(&self, seed: u64, identity: bool) -> ParamStore<S> {
        let mut store = ParamStore::zeros(self.layout.clone());
        let mut rng = seeded(seed);
        self.embed.init(&mut store, &mut rng, false);
        for c in &self.conditioners {
            c.init(&mut store, &mut rng, identity);
        }
        store
    }

    fn check_source<S: Scalar>(&self, src: &dyn WeightSource<S>) -> Result<()> {
        if **src.layout() != *self.layout {
            return Err(Error::InvalidConfig(
                "parameters do not match this flow's layout".into(),
            ));
        }
        Ok(())
    }

    fn check_series<S: Scalar>(&self, x: &TimeSeries<S>) -> Result<()> {
        if (x.steps(), x.dims()) != (self.config.obs_steps, self.config.obs_dims) {
            return Err(Error::Shape(format!(
                "observation is {}x{}, flow expects {}x{}",
                x.steps(),
                x.dims(),
                self.config.obs_steps,
                self.config.obs_dims
            )));
        }
        Ok(())
    }

    /// Standardized series stacked as rows.
    pub fn standardize_rows<S: Scalar>(&self, xs: &[&TimeSeries<S>]) -> Result<Matrix<S>> {
        let len = self.config.obs_len();
        let mut m = Matrix::zeros(xs.len(), len);
        for (i, x) in xs.iter().enumerate() {
            self.check_series(x)?;
            self.standardizer.apply(x.values(), m.row_mut(i));
        }
        Ok(m)
    }

    /// Embedding of standardized rows `x_std` (n×obs_len) → n×embed_dim.
    pub fn embed_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        src: &dyn WeightSource<S>,
        x_std: Var,
    ) -> Result<Var> {
        self.embed.forward(tape, src, x_std)
    }

    fn mask_rows<S: Scalar>(&self, tape: &mut Tape<S>, k: usize) -> (Var, Var) {
        let m: Vec<S> = self.masks[k].iter().map(|&b| if b { S::one() } else { S::zero() }).collect();
        let inv = m.iter().map(|&v| S::one() - v).collect();
        (
            tape.constant(Matrix::row_vector(m)),
            tape.constant(Matrix::row_vector(inv)),
        )
    }

    /// Log-scale (masked) and shift (masked) of layer `k` given the pass-through part of `x`.
    fn coupling_params<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        src: &dyn WeightSource<S>,
        k: usize,
        x: Var,
        emb: Var,
    ) -> Result<(Var, Var)> {
        let d = self.config.theta_dim;
        let (m, inv) = self.mask_rows(tape, k);
        let held = tape.mul(x, m)?;
        let input = tape.concat_cols(&[held, emb])?;
        let out = self.conditioners[k].forward(tape, src, input)?;
        let s_raw = tape.slice_cols(out, 0, d)?;
        let t = tape.slice_cols(out, d, 2 * d)?;
        let bound = S::lit(self.config.scale_bound);
        let s = tape.scale(s_raw, bound.recip());
        let s = tape.tanh(s);
        let s = tape.scale(s, bound);
        let s = tape.mul(s, inv)?;
        let t = tape.mul(t, inv)?;
        Ok((s, t))
    }

    fn check_inputs<S: Scalar>(&self, tape: &Tape<S>, theta: Var, emb: Var) -> Result<()> {
        let (n, d) = tape.shape(theta);
        if d != self.config.theta_dim {
            return Err(Error::Shape(format!(
                "θ has {d} coordinates, flow expects {}",
                self.config.theta_dim
            )));
        }
        if tape.shape(emb) != (n, self.config.embed_dim) {
            return Err(Error::Shape(format!(
                "embedding is {:?}, expected ({n}, {})",
                tape.shape(emb),
                self.config.embed_dim
            )));
        }
        Ok(())
    }

    /// `θ ↦ u = f(θ)` with the accumulated log |det J_f| (n×1).
    pub fn forward_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        src: &dyn WeightSource<S>,
        theta: Var,
        emb: Var,
    ) -> Result<(Var, Var)> {
        self.check_inputs(tape, theta, emb)?;
        let mut x = theta;
        let mut log_det: Option<Var> = None;
        for k in 0..self.config.n_layers {
            let (s, t) = self.coupling_params(tape, src, k, x, emb)?;
            let es = tape.exp(s);
            let scaled = tape.mul(x, es)?;
            x = tape.add(scaled, t)?;
            let ld = tape.row_sum(s);
            log_det = Some(match log_det {
                Some(acc) => tape.add(acc, ld)?,
                None => ld,
            });
        }
        Ok((x, log_det.expect("at least two layers")))
    }

    /// `log q(θ | e)` per row (n×1).
    pub fn log_prob_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        src: &dyn WeightSource<S>,
        theta: Var,
        emb: Var,
    ) -> Result<Var> {
        let (u, log_det) = self.forward_graph(tape, src, theta, emb)?;
        let sq = tape.square(u);
        let sq = tape.row_sum(sq);
        let base = tape.scale(sq, S::lit(-0.5));
        let half_d = S::from_usize_lossy(self.config.theta_dim) * S::lit(0.5);
        let base = tape.add_scalar(base, -half_d * ln_two_pi::<S>());
        tape.add(base, log_det)
    }

    /// `u ↦ θ = g(u)`, the inverse of [`forward_graph`](Self::forward_graph).
    pub fn inverse_graph<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        src: &dyn WeightSource<S>,
        u: Var,
        emb: Var,
    ) -> Result<Var> {
        self.check_inputs(tape, u, emb)?;
        let mut y = u;
        for k in (0..self.config.n_layers).rev() {
            let (s, t) = self.coupling_params(tape, src, k, y, emb)?;
            let shifted = tape.sub(y, t)?;
            let neg = tape.scale(s, -S::one());
            let es = tape.exp(neg);
            y = tape.mul(shifted, es)?;
        }
        Ok(y)
    }

    pub fn embed_observation<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        x: &TimeSeries<S>,
    ) -> Result<Embedding<S>> {
        self.check_source(src)?;
        let rows = self.standardize_rows(&[x])?;
        let mut tape = Tape::new(src.param_dim());
        let xv = tape.constant(rows);
        let e = self.embed_graph(&mut tape, src, xv)?;
        let v = tape.value(e).data().to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding".into()));
        }
        Ok(Embedding(v))
    }

    fn repeat_embedding<S: Scalar>(&self, e: &Embedding<S>, n: usize) -> Result<Matrix<S>> {
        if e.0.len() != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "embedding has {} entries, flow expects {}",
                e.0.len(),
                self.config.embed_dim
            )));
        }
        Ok(Matrix::from_fn(n, e.0.len(), |_, j| e.0[j]))
    }

    fn theta_rows<S: Scalar>(&self, thetas: &[ParameterVector<S>]) -> Result<Matrix<S>> {
        let d = self.config.theta_dim;
        let mut m = Matrix::zeros(thetas.len(), d);
        for (i, t) in thetas.iter().enumerate() {
            t.expect_dim(d, "flow")?;
            m.row_mut(i).copy_from_slice(t);
        }
        Ok(m)
    }

    /// `log q(θ_i | e)` for each row.
    pub fn log_prob_many<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        thetas: &[ParameterVector<S>],
        e: &Embedding<S>,
    ) -> Result<Vec<S>> {
        self.check_source(src)?;
        let mut tape = Tape::new(src.param_dim());
        let th = tape.constant(self.theta_rows(thetas)?);
        let ev = tape.constant(self.repeat_embedding(e, thetas.len())?);
        let lp = self.log_prob_graph(&mut tape, src, th, ev)?;
        let out = tape.value(lp).data().to_vec();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("log density of θ = {:?}", &thetas[i][..])));
        }
        Ok(out)
    }

    pub fn log_prob<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        theta: &ParameterVector<S>,
        e: &Embedding<S>,
    ) -> Result<S> {
        Ok(self.log_prob_many(src, std::slice::from_ref(theta), e)?[0])
    }

    /// `f(θ)` and log |det J_f(θ)| for each row.
    pub fn transform<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        thetas: &[ParameterVector<S>],
        e: &Embedding<S>,
    ) -> Result<(Vec<Vec<S>>, Vec<S>)> {
        self.check_source(src)?;
        let mut tape = Tape::new(src.param_dim());
        let th = tape.constant(self.theta_rows(thetas)?);
        let ev = tape.constant(self.repeat_embedding(e, thetas.len())?);
        let (u, ld) = self.forward_graph(&mut tape, src, th, ev)?;
        let u = tape.value(u);
        Ok(((0..u.rows()).map(|i| u.row(i).to_vec()).collect(), tape.value(ld).data().to_vec()))
    }

    /// `g(u)` for each row.
    pub fn inverse<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        us: &[Vec<S>],
        e: &Embedding<S>,
    ) -> Result<Vec<ParameterVector<S>>> {
        self.check_source(src)?;
        let d = self.config.theta_dim;
        let mut m = Matrix::zeros(us.len(), d);
        for (i, u) in us.iter().enumerate() {
            if u.len() != d {
                return Err(Error::Shape(format!("base point has {} coordinates, expected {d}", u.len())));
            }
            m.row_mut(i).copy_from_slice(u);
        }
        let mut tape = Tape::new(src.param_dim());
        let uv = tape.constant(m);
        let ev = tape.constant(self.repeat_embedding(e, us.len())?);
        let th = self.inverse_graph(&mut tape, src, uv, ev)?;
        let th = tape.value(th);
        Ok((0..th.rows()).map(|i| th.row(i).to_vec().into()).collect())
    }

    fn base_draws<S: Scalar>(&self, rng: &mut crate::rng::Rng, n: usize) -> Vec<Vec<S>> {
        (0..n)
            .map(|_| {
                (0..self.config.theta_dim)
                    .map(|_| S::lit(StandardNormal.sample(rng)))
                    .collect()
            })
            .collect()
    }

    /// `n` draws `θ = g(u)`, `u ~ N(0, I)`.
    pub fn sample<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        e: &Embedding<S>,
        n: usize,
        seed: u64,
    ) -> Result<Vec<ParameterVector<S>>> {
        if n == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        let mut rng = seeded(seed);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let chunk = (n - out.len()).min(4096);
            let us = self.base_draws(&mut rng, chunk);
            out.extend(self.inverse(src, &us, e)?);
        }
        Ok(out)
    }

    /// Rejection-samples flow draws until `n` fall inside `prior`'s box.
    pub fn sample_in_box<S: Scalar>(
        &self,
        src: &dyn WeightSource<S>,
        e: &Embedding<S>,
        n: usize,
        prior: &BoxUniformPrior<S>,
        seed: u64,
    ) -> Result<BoxSample<S>> {
        if n == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        if prior.dim() != self.config.theta_dim {
            return Err(Error::Shape("prior and flow dimensions differ".into()));
        }
        let mut rng = seeded(seed);
        let mut samples = Vec::with_capacity(n);
        let mut draws = 0usize;
        while samples.len() < n {
            let missing = n - samples.len();
            let chunk = missing.clamp(256, 16384);
            let us = self.base_draws(&mut rng, chunk);
            for th in self.inverse(src, &us, e)? {
                draws += 1;
                if prior.contains(&th) && samples.len() < n {
                    samples.push(th);
                }
            }
            if draws >= SAMPLE_BUDGET {
                let rate = samples.len() as f64 / draws as f64;
                if rate < MIN_ACCEPTANCE {
                    return Err(Error::DegenerateProposal { rate, draws });
                }
            }
        }
        Ok(BoxSample {
            acceptance_rate: n as f64 / draws as f64,
            samples,
            draws,
        })
    }

    /// Writes the configuration, standardizer and weights.
    pub fn save<S: Scalar>(&self, path: &Path, store: &ParamStore<S>) -> Result<()> {
        store.ensure_same_layout(&self.layout)?;
        let header = FlowHeader {
            config: self.config.clone(),
            standardizer: self.standardizer.clone(),
        };
        save_checkpoint(path, FLOW_FORMAT, &header, store)
    }

    pub fn load<S: Scalar>(path: &Path) -> Result<(Self, ParamStore<S>)> {
        let (header, stored): (FlowHeader, ParamStore<S>) = load_checkpoint(path, FLOW_FORMAT)?;
        let mut flow = ConditionalFlow::new(header.config)?;
        flow.set_standardizer(header.standardizer)?;
        stored.ensure_same_layout(&flow.layout)?;
        let store = ParamStore::unflatten(flow.layout.clone(), stored.flatten())?;
        Ok((flow, store))
    }
}

/// Convenience for evaluating a fixed parameter set.
pub fn frozen<S: Scalar>(store: &ParamStore<S>) -> Frozen<'_, S> {
    Frozen(store)
}
