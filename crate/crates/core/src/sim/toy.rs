use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::{ln_two_pi, Scalar};
use crate::sim::{ModelTag, ParameterVector, Simulator, TimeSeries};

/// `x_t = θ + σ ε_t` for `t < steps`, with a one-dimensional θ.
///
/// Its posterior under a box prior is a truncated normal, which makes it a
/// calibration target for the whole inference pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianToy {
    pub steps: usize,
    pub sigma: f64,
}

impl GaussianToy {
    /// Mean and standard deviation of θ | x under a flat prior on `[lo, hi]`.
    pub fn posterior_moments(&self, x: &[f64], lo: f64, hi: f64) -> (f64, f64) {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let s = self.sigma / n.sqrt();
        let k = 200_000;
        let h = (hi - lo) / k as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=k {
            let t = lo + i as f64 * h;
            let w = if i == 0 || i == k { 0.5 } else { 1.0 };
            let p = w * (-0.5 * ((t - mu) / s).powi(2)).exp();
            z += p;
            m1 += p * t;
            m2 += p * t * t;
        }
        let mean = m1 / z;
        (mean, (m2 / z - mean * mean).max(0.0).sqrt())
    }
}

impl<S: Scalar> Simulator<S> for GaussianToy {
    fn tag(&self) -> ModelTag {
        ModelTag::Generic
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn obs_shape(&self) -> (usize, usize) {
        (self.steps, 1)
    }

    fn simulate(&self, theta: &ParameterVector<S>, seed: u64) -> Result<TimeSeries<S>> {
        theta.expect_dim(1, "Gaussian toy")?;
        let mut rng = seeded(seed);
        let sigma = S::lit(self.sigma);
        let data = (0..self.steps)
            .map(|_| theta[0] + sigma * S::lit(StandardNormal.sample(&mut rng)))
            .collect();
        TimeSeries::new(ModelTag::Generic, self.steps, 1, data)
    }

    fn loglik(&self, theta: &ParameterVector<S>, series: &TimeSeries<S>) -> Result<S> {
        theta.expect_dim(1, "Gaussian toy")?;
        if self.sigma <= 0.0 {
            return Err(Error::Degenerate("Gaussian toy with zero noise".into()));
        }
        let sigma = S::lit(self.sigma);
        let half = S::lit(0.5);
        Ok(series
            .values()
            .iter()
            .map(|&x| {
                let z = (x - theta[0]) / sigma;
                -half * z * z - sigma.ln() - half * ln_two_pi::<S>()
            })
            .sum())
    }
}
