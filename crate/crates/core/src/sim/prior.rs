
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::sim::ParameterVector;

/// Independent uniform prior on an axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxUniformPrior<S> {
    lower: Vec<S>,
    upper: Vec<S>,
}

impl<S: Scalar> BoxUniformPrior<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "prior bounds have lengths {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) {
                return Err(Error::InvalidConfig(format!(
                    "prior bound {i}: lower {l} is not below upper {u}"
                )));
            }
        }
        Ok(BoxUniformPrior { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[S] {
        &self.lower
    }

    pub fn upper(&self) -> &[S] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<S> {
        self.lower.iter().zip(&self.upper).map(|(&l, &u)| u - l).collect()
    }

    pub fn contains(&self, theta: &[S]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&t, (&l, &u))| t >= l && t <= u)
    }

    /// Log density inside the box: `-Σ log(width)`.
    pub fn log_density_inside(&self) -> S {
        -self.widths().into_iter().map(|w| w.ln()).sum::<S>()
    }

    pub fn log_prob(&self, theta: &[S]) -> S {
        if self.contains(theta) {
            self.log_density_inside()
        } else {
            S::neg_infinity()
        }
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ParameterVector<S> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| l + (u - l) * S::lit(rng.random::<f64>()))
            .collect::<Vec<_>>()
            .into()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<ParameterVector<S>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}
