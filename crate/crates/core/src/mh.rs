//! Random-walk Metropolis–Hastings for models with a tractable likelihood.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, stream};
use crate::scalar::Scalar;
use crate::sim::{BoxUniformPrior, ParameterVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MhConfig {
    /// Draws kept after burn-in and thinning.
    pub n_samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Proposal std per coordinate. Empty means `step_fraction` of each box width.
    pub step_scales: Vec<f64>,
    pub step_fraction: f64,
    pub adapt_burnin: bool,
    pub target_accept: f64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            n_samples: 20_000,
            burn_in: 10_000,
            thin: 5,
            step_scales: Vec::new(),
            step_fraction: 0.05,
            adapt_burnin: true,
            target_accept: 0.234,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thinning stride must be at least 1".into()));
        }
        if self.step_scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig(format!("step scales must be positive, got {:?}", self.step_scales)));
        }
        if self.step_scales.is_empty() && !(self.step_fraction > 0.0 && self.step_fraction.is_finite()) {
            return Err(Error::InvalidConfig(format!("step fraction must be positive, got {}", self.step_fraction)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig(format!("target acceptance {} outside (0, 1)", self.target_accept)));
        }
        Ok(())
    }

    fn scales<S: Scalar>(&self, prior: &BoxUniformPrior<S>) -> Result<Vec<f64>> {
        if self.step_scales.is_empty() {
            return Ok(prior.widths().iter().map(|w| w.as_f64() * self.step_fraction).collect());
        }
        if self.step_scales.len() != prior.dim() {
            return Err(Error::Shape(format!(
                "{} step scales for {} parameters",
                self.step_scales.len(),
                prior.dim()
            )));
        }
        Ok(self.step_scales.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chain<S> {
    pub samples: Vec<ParameterVector<S>>,
    /// Share of accepted proposals after burn-in.
    pub acceptance_rate: f64,
    /// Proposal scales in effect after burn-in.
    pub step_scales: Vec<f64>,
}

const ADAPT_WINDOW: usize = 50;

pub fn run_mh<S: Scalar>(
    loglik: &dyn Fn(&ParameterVector<S>) -> Result<S>,
    prior: &BoxUniformPrior<S>,
    init: &ParameterVector<S>,
    config: &MhConfig,
    seed: u64,
) -> Result<Chain<S>> {
    config.validate()?;
    if init.dim() != prior.dim() || !prior.contains(init) {
        return Err(Error::OutOfSupport(format!("initial point {:?}", &init[..])));
    }
    let mut scales = config.scales(prior)?;
    let mut current = init.clone();
    let mut current_ll = loglik(&current)?;
    if !current_ll.is_finite() {
        return Err(Error::NonFinite(format!("log-likelihood at initial point {:?}", &init[..])));
    }
    let mut rng = seeded(seed);
    let d = prior.dim();
    let mut proposal = vec![S::zero(); d];
    let mut step = |rng: &mut crate::rng::Rng, current: &mut ParameterVector<S>, current_ll: &mut S, scales: &[f64]| -> Result<bool> {
        for ((p, &c), &s) in proposal.iter_mut().zip(current.iter()).zip(scales) {
            let z: f64 = StandardNormal.sample(rng);
            *p = c + S::lit(s * z);
        }
        // Uniform prior: the prior ratio is 1 inside the box and 0 outside.
        if !prior.contains(&proposal) {
            return Ok(false);
        }
        let cand = ParameterVector::new(proposal.clone());
        let ll = loglik(&cand)?;
        let log_ratio = (ll - *current_ll).as_f64();
        if ll.is_finite() && (log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio) {
            *current = cand;
            *current_ll = ll;
            return Ok(true);
        }
        Ok(false)
    };

    let mut window = 0;
    for i in 0..config.burn_in {
        window += step(&mut rng, &mut current, &mut current_ll, &scales)? as usize;
        if config.adapt_burnin && (i + 1) % ADAPT_WINDOW == 0 {
            let rate = window as f64 / ADAPT_WINDOW as f64;
            let k = (rate - config.target_accept).exp();
            scales.iter_mut().for_each(|s| *s *= k);
            window = 0;
        }
    }
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut accepted = 0usize;
    for _ in 0..config.n_samples {
        for _ in 0..config.thin {
            accepted += step(&mut rng, &mut current, &mut current_ll, &scales)? as usize;
        }
        samples.push(current.clone());
    }
    let total = config.n_samples * config.thin;
    Ok(Chain {
        samples,
        acceptance_rate: if total == 0 { 0.0 } else { accepted as f64 / total as f64 },
        step_scales: scales,
    })
}

/// Split-chain potential scale reduction per coordinate. Each chain is cut in
/// half and the halves are treated as separate chains.
pub fn split_rhat<S: Scalar>(chains: &[Vec<ParameterVector<S>>]) -> Result<Vec<f64>> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    if chains.is_empty() || n < 2 {
        return Err(Error::InvalidConfig("split R-hat needs chains of at least four draws".into()));
    }
    let d = chains[0][0].dim();
    let halves: Vec<&[ParameterVector<S>]> = chains.iter().flat_map(|c| [&c[..n], &c[n..2 * n]]).collect();
    let m = halves.len() as f64;
    let nf = n as f64;
    Ok((0..d)
        .map(|j| {
            let stats: Vec<(f64, f64)> = halves
                .iter()
                .map(|h| {
                    let mean = h.iter().map(|t| t[j].as_f64()).sum::<f64>() / nf;
                    let var = h.iter().map(|t| (t[j].as_f64() - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                    (mean, var)
                })
                .collect();
            let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
            let b = nf / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
            let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
            if w == 0.0 {
                return if b == 0.0 { 1.0 } else { f64::INFINITY };
            }
            (((nf - 1.0) / nf * w + b / nf) / w).sqrt()
        })
        .collect())
}

/// Pooled draws of several independent chains with their diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference<S> {
    pub samples: Vec<ParameterVector<S>>,
    pub acceptance: Vec<f64>,
    pub rhat: Vec<f64>,
    pub chain_seeds: Vec<u64>,
}

impl<S> Reference<S> {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn converged(&self, threshold: f64) -> bool {
        self.max_rhat() < threshold
    }
}

/// Runs `chains` chains started at prior draws and pools their samples in chain order.
pub fn mh_reference<S: Scalar>(
    loglik: &dyn Fn(&ParameterVector<S>) -> Result<S>,
    prior: &BoxUniformPrior<S>,
    config: &MhConfig,
    chains: usize,
    seed: u64,
) -> Result<Reference<S>> {
    if chains == 0 {
        return Err(Error::InvalidConfig("at least one chain is needed".into()));
    }
    let mut out = Reference {
        samples: Vec::new(),
        acceptance: Vec::new(),
        rhat: Vec::new(),
        chain_seeds: Vec::new(),
    };
    let mut all = Vec::with_capacity(chains);
    for c in 0..chains {
        let chain_seed = derive_seed(seed, stream::MH, c as u64);
        let mut init_rng = seeded(derive_seed(chain_seed, stream::MH, u64::MAX));
        let mut init = prior.sample_with(&mut init_rng);
        let mut tries = 1;
        while !loglik(&init)?.is_finite() {
            if tries == 1000 {
                return Err(Error::Degenerate("no prior draw with finite likelihood in 1000 tries".into()));
            }
            init = prior.sample_with(&mut init_rng);
            tries += 1;
        }
        let chain = run_mh(loglik, prior, &init, config, chain_seed)?;
        out.acceptance.push(chain.acceptance_rate);
        out.chain_seeds.push(chain_seed);
        all.push(chain.samples);
    }
    out.rhat = if chains > 1 || all[0].len() >= 4 { split_rhat(&all)? } else { Vec::new() };
    out.samples = all.into_iter().flatten().collect();
    Ok(out)
}
