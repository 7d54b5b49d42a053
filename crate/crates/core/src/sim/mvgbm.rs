//! Multivariate geometric Brownian motion with exact log-normal transitions.
//!
//! With `Z = log X`, one step of length Δt is
//! `Z' = Z + (θ - γ)Δt + σ w √Δt`, `w ~ N(0, I)`, `γᵢ = ½ Σⱼ σᵢⱼ²`,
//! so `Z' | Z ~ N(Z + (θ - γ)Δt, σσᵀΔt)`. The volatility matrix itself mixes the noise.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::{ln_two_pi, Scalar};
use crate::sim::{ModelTag, ParameterVector, TimeSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvgbmConfig {
    pub dim: usize,
    /// Row-major `dim x dim` volatility matrix.
    pub sigma: Vec<f64>,
    /// Time step between observations.
    pub dt: f64,
    /// Number of observed points, including `x0`.
    pub horizon: usize,
    pub x0: Vec<f64>,
}

impl MvgbmConfig {
    /// `horizon` points spaced `1 / (horizon - 1)` apart starting at `x0`.
    pub fn unit_interval(sigma: Vec<f64>, dim: usize, horizon: usize) -> Self {
        MvgbmConfig {
            dim,
            sigma,
            dt: 1.0 / (horizon as f64 - 1.0),
            horizon,
            x0: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("MVGBM: {m}")));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if self.sigma.len() != self.dim * self.dim {
            return bad(format!(
                "volatility matrix has {} entries, expected {}",
                self.sigma.len(),
                self.dim * self.dim
            ));
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if self.horizon < 2 {
            return bad("horizon must include at least one transition".into());
        }
        if self.x0.len() != self.dim || self.x0.iter().any(|&v| !(v > 0.0)) {
            return bad("x0 must hold `dim` strictly positive values".into());
        }
        Ok(())
    }

    /// γᵢ = ½ Σⱼ σᵢⱼ², always derived from the current volatility matrix.
    pub fn gamma(&self) -> Vec<f64> {
        self.sigma
            .chunks(self.dim)
            .map(|row| 0.5 * row.iter().map(|s| s * s).sum::<f64>())
            .collect()
    }

    /// σσᵀ, row-major.
    pub fn covariance_rate(&self) -> Vec<f64> {
        let d = self.dim;
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] = (0..d).map(|k| self.sigma[i * d + k] * self.sigma[j * d + k]).sum();
            }
        }
        c
    }
}

/// Standard normal draws consumed by [`simulate`] for `seed`, step-major.
pub fn noise_stream(seed: u64, steps: usize, dim: usize) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..steps * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn simulate<S: Scalar>(
    config: &MvgbmConfig,
    theta: &ParameterVector<S>,
    seed: u64,
) -> Result<TimeSeries<S>> {
    config.validate()?;
    let noise = noise_stream(seed, config.horizon - 1, config.dim);
    simulate_with_noise(config, theta, &noise)
}

pub fn simulate_with_noise<S: Scalar>(
    config: &MvgbmConfig,
    theta: &ParameterVector<S>,
    unit_noise: &[f64],
) -> Result<TimeSeries<S>> {
    let d = config.dim;
    theta.expect_dim(d, "MVGBM")?;
    if unit_noise.len() < (config.horizon - 1) * d {
        return Err(Error::Shape("not enough MVGBM noise draws".into()));
    }
    let dt = S::lit(config.dt);
    let sqrt_dt = dt.sqrt();
    let sigma: Vec<S> = config.sigma.iter().map(|&v| S::lit(v)).collect();
    let drift: Vec<S> = config
        .gamma()
        .iter()
        .zip(theta.iter())
        .map(|(&g, &b)| (b - S::lit(g)) * dt)
        .collect();
    let mut z: Vec<S> = config.x0.iter().map(|&v| S::lit(v).ln()).collect();
    let mut out: Vec<S> = config.x0.iter().map(|&v| S::lit(v)).collect();
    out.reserve((config.horizon - 1) * d);
    for w in unit_noise.chunks_exact(d).take(config.horizon - 1) {
        for i in 0..d {
            let mut shock = S::zero();
            for j in 0..d {
                shock += sigma[i * d + j] * S::lit(w[j]);
            }
            z[i] += drift[i] + sqrt_dt * shock;
        }
        out.extend(z.iter().map(|v| v.exp()));
    }
    TimeSeries::new(ModelTag::Mvgbm, config.horizon, d, out)
}

/// Lower Cholesky factor of a symmetric positive definite matrix, row-major.
pub(crate) fn cholesky<S: Scalar>(a: &[S], n: usize) -> Result<Vec<S>> {
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > S::zero()) {
                    return Err(Error::Degenerate(
                        "MVGBM transition covariance is not positive definite".into(),
                    ));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}

/// Log density of the observed path given its first point, over X (Jacobian term included).
pub fn loglik<S: Scalar>(
    config: &MvgbmConfig,
    theta: &ParameterVector<S>,
    series: &TimeSeries<S>,
) -> Result<S> {
    config.validate()?;
    let d = config.dim;
    theta.expect_dim(d, "MVGBM")?;
    if series.dims() != d || series.steps() < 2 {
        return Err(Error::Shape(format!(
            "MVGBM likelihood needs a {d}-dimensional series of at least 2 steps"
        )));
    }
    if series.values().iter().any(|&v| !(v > S::zero())) {
        return Err(Error::OutOfSupport("MVGBM series must be strictly positive".into()));
    }
    let dt = S::lit(config.dt);
    let cov: Vec<S> = config.covariance_rate().iter().map(|&c| S::lit(c) * dt).collect();
    let chol = cholesky(&cov, d)?;
    let half_logdet: S = (0..d).map(|i| chol[i * d + i].ln()).sum();
    let norm = -S::lit(0.5) * S::from_usize_lossy(d) * ln_two_pi::<S>() - half_logdet;
    let drift: Vec<S> = config
        .gamma()
        .iter()
        .zip(theta.iter())
        .map(|(&g, &b)| (b - S::lit(g)) * dt)
        .collect();

    let mut resid = vec![S::zero(); d];
    let mut total = S::zero();
    for t in 1..series.steps() {
        let (prev, next) = (series.row(t - 1), series.row(t));
        for i in 0..d {
            resid[i] = next[i].ln() - prev[i].ln() - drift[i];
        }
        // Forward substitution L y = resid.
        let mut quad = S::zero();
        for i in 0..d {
            let mut s = resid[i];
            for k in 0..i {
                s -= chol[i * d + k] * resid[k];
            }
            resid[i] = s / chol[i * d + i];
            quad += resid[i] * resid[i];
        }
        let jacobian: S = next.iter().map(|v| v.ln()).sum();
        total += norm - S::lit(0.5) * quad - jacobian;
    }
    Ok(total)
}
