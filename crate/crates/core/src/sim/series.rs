use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Bh,
    Mvgbm,
    /// Any real-valued series, for simulators supplied by the caller.
    Generic,
}

/// A point in the parameter space of the active simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<S>(Vec<S>);

impl<S: Scalar> ParameterVector<S> {
    pub fn new(values: Vec<S>) -> Self {
        ParameterVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    pub(crate) fn expect_dim(&self, dim: usize, who: &str) -> Result<()> {
        if self.0.len() != dim {
            return Err(Error::Shape(format!(
                "{who}: parameter vector has length {}, expected {dim}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl<S> Deref for ParameterVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S: Scalar> From<Vec<S>> for ParameterVector<S> {
    fn from(v: Vec<S>) -> Self {
        ParameterVector(v)
    }
}

impl<S: Scalar, const N: usize> From<[S; N]> for ParameterVector<S> {
    fn from(v: [S; N]) -> Self {
        ParameterVector(v.to_vec())
    }
}

/// A trajectory of `steps` rows by `dims` columns, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries<S> {
    tag: ModelTag,
    steps: usize,
    dims: usize,
    data: Vec<S>,
}

impl<S: Scalar> TimeSeries<S> {
    pub fn new(tag: ModelTag, steps: usize, dims: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != steps * dims || dims == 0 {
            return Err(Error::Shape(format!(
                "time series of {steps}x{dims} cannot hold {} values",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "time series entry {i} (step {}, dim {})",
                i / dims,
                i % dims
            )));
        }
        if tag == ModelTag::Mvgbm {
            if let Some(i) = data.iter().position(|&v| v <= S::zero()) {
                return Err(Error::OutOfSupport(format!(
                    "MVGBM series entry {i} is not strictly positive"
                )));
            }
        }
        Ok(TimeSeries {
            tag,
            steps,
            dims,
            data,
        })
    }

    pub fn tag(&self) -> ModelTag {
        self.tag
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Flattened row-major values, `steps * dims` long.
    pub fn values(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[S] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn get(&self, t: usize, i: usize) -> S {
        self.data[t * self.dims + i]
    }

    /// Rows `start..end` as a new series.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.steps {
            return Err(Error::Shape(format!(
                "window {start}..{end} outside series of {} steps",
                self.steps
            )));
        }
        TimeSeries::new(
            self.tag,
            end - start,
            self.dims,
            self.data[start * self.dims..end * self.dims].to_vec(),
        )
    }
}
