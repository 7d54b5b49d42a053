//! Brock–Hommes heterogeneous-beliefs asset pricing model with four trader types.
//!
//! The price deviation evolves as
//! `x_{t+1} = (1/R) [ Σ_h n_{h,t+1} (g_h x_t + b_h) + ε_{t+1} ]` with discrete-choice
//! fractions `n_{h,t+1} ∝ exp(β U_h)`, `U_h = (x_t - R x_{t-1})(g_h x_{t-2} + b_h - R x_{t-1})`.
//! Types 1 and 4 use fixed rules; θ = (g₂, b₂, g₃, b₃) sets types 2 and 3.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::{ln_two_pi, Scalar};
use crate::sim::{ModelTag, ParameterVector, TimeSeries};

pub const TRADER_TYPES: usize = 4;
pub const THETA_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedRules {
    pub g1: f64,
    pub b1: f64,
    pub g4: f64,
    pub b4: f64,
}

impl Default for FixedRules {
    fn default() -> Self {
        FixedRules {
            g1: 0.0,
            b1: 0.0,
            g4: 1.01,
            b4: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhConfig {
    /// Intensity of choice.
    pub beta: f64,
    /// Gross interest rate R = 1 + r.
    pub gross_rate: f64,
    /// Standard deviation of the additive price shock.
    pub noise_sigma: f64,
    pub fixed_rules: FixedRules,
    /// Number of returned steps.
    pub horizon: usize,
    /// Generated steps discarded before the returned window.
    pub burn_in: usize,
    /// Seed states (x_{t-2}, x_{t-1}, x_t).
    pub init_states: [f64; 3],
    /// Divergence guard on |x_t|.
    pub magnitude_guard: f64,
}

impl BhConfig {
    pub fn with_beta(beta: f64) -> Self {
        BhConfig {
            beta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("Brock–Hommes: {m}")));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and non-negative");
        }
        if !(self.gross_rate > 1.0) {
            return bad("gross rate must exceed 1");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        if self.horizon < 4 {
            return bad("horizon must be at least 4");
        }
        if !(self.magnitude_guard > 0.0) {
            return bad("magnitude guard must be positive");
        }
        Ok(())
    }

    /// Trend coefficients and biases for the four types under `theta`.
    fn rules<S: Scalar>(&self, theta: &[S]) -> ([S; TRADER_TYPES], [S; TRADER_TYPES]) {
        let f = &self.fixed_rules;
        (
            [S::lit(f.g1), theta[0], theta[2], S::lit(f.g4)],
            [S::lit(f.b1), theta[1], theta[3], S::lit(f.b4)],
        )
    }
}

impl Default for BhConfig {
    fn default() -> Self {
        BhConfig {
            beta: 120.0,
            gross_rate: 1.01,
            noise_sigma: 0.04,
            fixed_rules: FixedRules::default(),
            horizon: 100,
            burn_in: 0,
            init_states: [0.0; 3],
            magnitude_guard: 1e6,
        }
    }
}

/// Strategy fractions for the next step given `state = (x_{t-2}, x_{t-1}, x_t)`.
pub fn strategy_fractions<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    state: [S; 3],
) -> Result<[S; TRADER_TYPES]> {
    theta.expect_dim(THETA_DIM, "Brock–Hommes")?;
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "Brock–Hommes state {state:?}: corrupted trajectory"
        )));
    }
    let (g, b) = config.rules(theta);
    let r = S::lit(config.gross_rate);
    let beta = S::lit(config.beta);
    let [x2, x1, x0] = state;
    let momentum = x0 - r * x1;
    let mut z = [S::zero(); TRADER_TYPES];
    for h in 0..TRADER_TYPES {
        z[h] = beta * momentum * (g[h] * x2 + b[h] - r * x1);
    }
    Ok(softmax(z))
}

fn softmax<S: Scalar, const N: usize>(z: [S; N]) -> [S; N] {
    let max = z.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out = z.map(|v| (v - max).exp());
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Conditional mean of x_{t+1} given `history = (y_{t-2}, y_{t-1}, y_t)`.
pub fn transition_mean<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    history: [S; 3],
) -> Result<S> {
    let n = strategy_fractions(config, theta, history)?;
    let (g, b) = config.rules(theta);
    let x0 = history[2];
    let mut acc = S::zero();
    for h in 0..TRADER_TYPES {
        acc += n[h] * (g[h] * x0 + b[h]);
    }
    Ok(acc / S::lit(config.gross_rate))
}

/// log N(next; f(history; θ), σ²/R²).
pub fn transition_logpdf<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    history: [S; 3],
    next: S,
) -> Result<S> {
    if config.noise_sigma <= 0.0 {
        return Err(Error::Degenerate(
            "Brock–Hommes transition density needs noise_sigma > 0".into(),
        ));
    }
    let mean = transition_mean(config, theta, history)?;
    let sd = S::lit(config.noise_sigma / config.gross_rate);
    let z = (next - mean) / sd;
    Ok(-S::lit(0.5) * (ln_two_pi::<S>() + S::lit(2.0) * sd.ln() + z * z))
}

/// Sum of transition log densities; the first three observations are conditioned on.
pub fn loglik<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    series: &TimeSeries<S>,
) -> Result<S> {
    if series.steps() < 4 || series.dims() != 1 {
        return Err(Error::Shape(format!(
            "Brock–Hommes likelihood needs a univariate series of at least 4 steps, got {}x{}",
            series.steps(),
            series.dims()
        )));
    }
    let y = series.values();
    let mut total = S::zero();
    for t in 3..y.len() {
        total += transition_logpdf(config, theta, [y[t - 3], y[t - 2], y[t - 1]], y[t])?;
    }
    Ok(total)
}

/// Standard normal shocks consumed by [`simulate`] for `seed`, in order of use.
pub fn noise_stream(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn simulate<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    seed: u64,
) -> Result<TimeSeries<S>> {
    config.validate()?;
    let noise = noise_stream(seed, config.burn_in + config.horizon);
    simulate_with_noise(config, theta, &noise)
}

/// Runs the recursion with explicit unit shocks (scaled by `noise_sigma` internally).
pub fn simulate_with_noise<S: Scalar>(
    config: &BhConfig,
    theta: &ParameterVector<S>,
    unit_noise: &[f64],
) -> Result<TimeSeries<S>> {
    theta.expect_dim(THETA_DIM, "Brock–Hommes")?;
    let total = config.burn_in + config.horizon;
    if unit_noise.len() < total {
        return Err(Error::Shape(format!(
            "need {total} noise draws, got {}",
            unit_noise.len()
        )));
    }
    let (g, b) = config.rules(theta);
    let r = S::lit(config.gross_rate);
    let sigma = S::lit(config.noise_sigma);
    let guard = S::lit(config.magnitude_guard);
    let mut state = config.init_states.map(S::lit);
    let mut out = Vec::with_capacity(config.horizon);
    for (step, &z) in unit_noise[..total].iter().enumerate() {
        let n = strategy_fractions(config, theta, state)?;
        let x0 = state[2];
        let mut drift = S::zero();
        for h in 0..TRADER_TYPES {
            drift += n[h] * (g[h] * x0 + b[h]);
        }
        let next = (drift + sigma * S::lit(z)) / r;
        if !next.is_finite() || next.abs() > guard {
            return Err(Error::Explosive {
                step,
                value: next.to_f64().unwrap_or(f64::INFINITY),
                guard: config.magnitude_guard,
            });
        }
        state = [state[1], state[2], next];
        if step >= config.burn_in {
            out.push(next);
        }
    }
    TimeSeries::new(ModelTag::Bh, config.horizon, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta(v: [f64; 4]) -> ParameterVector<f64> {
        v.into()
    }

    #[test]
    fn zero_beta_gives_uniform_fractions() {
        let cfg = BhConfig::with_beta(0.0);
        let n = strategy_fractions(&cfg, &theta([0.9, 0.2, 0.9, -0.2]), [0.3, -1.2, 2.0]).unwrap();
        assert_eq!(n, [0.25; 4]);
    }

    #[test]
    fn zero_state_gives_uniform_fractions() {
        let cfg = BhConfig::with_beta(200.0);
        let n = strategy_fractions(&cfg, &theta([0.4, 0.7, 0.1, -0.9]), [0.0; 3]).unwrap();
        assert_eq!(n, [0.25; 4]);
    }

    #[test]
    fn single_dominant_utility() {
        // x_{t-2} = x_{t-1} = 0 and x_t = 1 make U_h = b_h; b1 = 1 forces utilities (1, 0, 0, 0).
        let cfg = BhConfig {
            beta: 1.0,
            fixed_rules: FixedRules {
                b1: 1.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let n = strategy_fractions(&cfg, &theta([0.3, 0.0, 0.6, 0.0]), [0.0, 0.0, 1.0]).unwrap();
        let e = std::f64::consts::E;
        let want = [e / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0), 1.0 / (e + 3.0)];
        for (a, b) in n.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let cfg = BhConfig::default();
        let err = strategy_fractions(&cfg, &theta([0.5; 4]), [0.0, f64::NAN, 0.0]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn all_zero_rules_stay_at_fixed_point() {
        let cfg = BhConfig {
            noise_sigma: 0.0,
            fixed_rules: FixedRules {
                g4: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let s = simulate(&cfg, &theta([0.0; 4]), 3).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.steps(), 100);
    }

    #[test]
    fn simulation_is_deterministic_per_seed() {
        let cfg = BhConfig::default();
        let t = theta([0.9, 0.2, 0.9, -0.2]);
        let a = simulate(&cfg, &t, 42).unwrap();
        let b = simulate(&cfg, &t, 42).unwrap();
        let c = simulate(&cfg, &t, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_beta_matches_linear_recursion() {
        let cfg = BhConfig {
            beta: 0.0,
            burn_in: 5,
            ..Default::default()
        };
        let t = [0.9, 0.2, 0.9, -0.2];
        let s = simulate(&cfg, &theta(t), 9).unwrap();
        let eps = noise_stream(9, cfg.burn_in + cfg.horizon);
        let g = [0.0, t[0], t[2], 1.01];
        let b = [0.0, t[1], t[3], 0.0];
        let mut x = 0.0;
        let mut replay = Vec::new();
        for (k, e) in eps.iter().enumerate() {
            let mean: f64 = (0..4).map(|h| g[h] * x + b[h]).sum::<f64>() / 4.0;
            x = (mean + 0.04 * e) / 1.01;
            if k >= cfg.burn_in {
                replay.push(x);
            }
        }
        for (a, b) in s.values().iter().zip(&replay) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn explosive_dynamics_are_reported() {
        let cfg = BhConfig {
            beta: 0.0,
            noise_sigma: 0.0,
            init_states: [1.0, 1.0, 1.0],
            fixed_rules: FixedRules {
                g1: 3.0,
                g4: 3.0,
                ..Default::default()
            },
            horizon: 200,
            ..Default::default()
        };
        let err = simulate(&cfg, &theta([3.0, 0.0, 3.0, 0.0]), 0).unwrap_err();
        assert!(matches!(err, Error::Explosive { .. }));
    }

    #[test]
    fn logpdf_at_zero_mean() {
        let cfg = BhConfig {
            fixed_rules: FixedRules {
                g4: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let lp = transition_logpdf(&cfg, &theta([0.0; 4]), [0.0; 3], 0.0).unwrap();
        let var = (0.04f64 / 1.01).powi(2);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI * var).ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_at_mode_and_independent_transcription() {
        let cfg = BhConfig::with_beta(60.0);
        let t = theta([0.7, 0.3, 0.2, -0.6]);
        let hist = [0.12, -0.05, 0.2];
        let mode = transition_mean(&cfg, &t, hist).unwrap();
        let lp = transition_logpdf(&cfg, &t, hist, mode).unwrap();
        let var = (0.04f64 / 1.01).powi(2);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI * var).ln()).abs() < 1e-12);

        // Direct transcription of the transition density.
        let (r, beta) = (1.01f64, 60.0f64);
        let g = [0.0, 0.7, 0.2, 1.01];
        let b = [0.0, 0.3, -0.6, 0.0];
        let (y2, y1, y0) = (hist[0], hist[1], hist[2]);
        let w: Vec<f64> = (0..4)
            .map(|h| (beta * (y0 - r * y1) * (g[h] * y2 + b[h] - r * y1)).exp())
            .collect();
        let wsum: f64 = w.iter().sum();
        let f: f64 = (0..4).map(|h| w[h] / wsum * (g[h] * y0 + b[h])).sum::<f64>() / r;
        let next = 0.31;
        let sd = 0.04 / r;
        let direct = -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln()
            - 0.5 * ((next - f) / sd).powi(2);
        let got = transition_logpdf(&cfg, &t, hist, next).unwrap();
        assert!((got - direct).abs() < 1e-10, "{got} vs {direct}");
    }

    #[test]
    fn degenerate_noise_is_an_error() {
        let cfg = BhConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            transition_logpdf(&cfg, &theta([0.5; 4]), [0.0; 3], 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn loglik_sums_transitions() {
        let cfg = BhConfig::with_beta(60.0);
        let t = theta([0.9, 0.2, 0.9, -0.2]);
        let s = simulate(&cfg, &t, 5).unwrap();
        let four = s.window(0, 4).unwrap();
        let y = four.values();
        let single = transition_logpdf(&cfg, &t, [y[0], y[1], y[2]], y[3]).unwrap();
        assert_eq!(loglik(&cfg, &t, &four).unwrap(), single);

        let ten = s.window(0, 10).unwrap();
        let y = ten.values();
        let terms: f64 = (3..10)
            .map(|k| transition_logpdf(&cfg, &t, [y[k - 3], y[k - 2], y[k - 1]], y[k]).unwrap())
            .sum();
        assert!((loglik(&cfg, &t, &ten).unwrap() - terms).abs() < 1e-10);
    }

    #[test]
    fn ground_truth_outscores_far_parameters() {
        let cfg = BhConfig::with_beta(60.0);
        let truth = theta([0.9, 0.2, 0.9, -0.2]);
        let far = theta([3.0, -2.0, -1.5, 2.5]);
        let (mut at_truth, mut at_far) = (0.0, 0.0);
        for seed in 0..20 {
            let s = simulate(&cfg, &truth, seed).unwrap();
            at_truth += loglik(&cfg, &truth, &s).unwrap();
            at_far += loglik(&cfg, &far, &s).unwrap();
        }
        assert!(at_truth > at_far);
    }

    #[test]
    fn transition_density_integrates_to_one() {
        let cfg = BhConfig::with_beta(120.0);
        let t = theta([0.6, 0.4, 0.7, -0.3]);
        let hist = [0.05, 0.1, -0.02];
        let mean = transition_mean(&cfg, &t, hist).unwrap();
        let sd = 0.04 / 1.01;
        let (lo, hi, n) = (mean - 12.0 * sd, mean + 12.0 * sd, 20_000);
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for k in 0..=n {
            let y = lo + h * k as f64;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            integral += w * transition_logpdf(&cfg, &t, hist, y).unwrap().exp();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }
}
