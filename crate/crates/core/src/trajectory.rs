//! Ensembles of time-indexed paths on a shared grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("time grid must be strictly increasing")]
    GridNotIncreasing,
    #[error("value table has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("input table has {got} rows, expected one per time ({expected})")]
    Inputs { expected: usize, got: usize },
}

/// Affine map from raw units to model units, `model = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl Scaling {
    pub fn to_model(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }

    pub fn to_raw(&self, model: f64) -> f64 {
        model * self.scale + self.offset
    }
}

/// `n_traj` paths of `dim`-dimensional observations at `times`, stored
/// trajectory-major. Optional `inputs` give the exogenous input `x(t_k)`
/// shared by every path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEnsemble {
    times: Vec<f64>,
    dim: usize,
    values: Vec<f64>,
    inputs: Option<Vec<Vec<f64>>>,
}

impl TrajectoryEnsemble {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Result<Self, TrajectoryError> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TrajectoryError::GridNotIncreasing);
        }
        let row = times.len() * dim;
        if row == 0 || values.len() % row != 0 {
            return Err(TrajectoryError::Shape {
                expected: row,
                got: values.len(),
            });
        }
        Ok(Self {
            times,
            dim,
            values,
            inputs: None,
        })
    }

    /// Build from one `Vec` per path of scalar observations.
    pub fn from_paths(times: Vec<f64>, paths: Vec<Vec<f64>>) -> Result<Self, TrajectoryError> {
        let n_t = times.len();
        if let Some(p) = paths.iter().find(|p| p.len() != n_t) {
            return Err(TrajectoryError::Shape {
                expected: n_t,
                got: p.len(),
            });
        }
        Self::new(times, 1, paths.concat())
    }

    pub fn with_inputs(mut self, inputs: Vec<Vec<f64>>) -> Result<Self, TrajectoryError> {
        if inputs.len() != self.times.len() {
            return Err(TrajectoryError::Inputs {
                expected: self.times.len(),
                got: inputs.len(),
            });
        }
        self.inputs = Some(inputs);
        Ok(self)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn inputs(&self) -> Option<&[Vec<f64>]> {
        self.inputs.as_deref()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs
            .as_ref()
            .and_then(|i| i.first())
            .map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_traj(&self) -> usize {
        self.values.len() / (self.times.len() * self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Path `j` as `n_times * dim` values, time-major.
    pub fn path(&self, j: usize) -> &[f64] {
        let row = self.times.len() * self.dim;
        &self.values[j * row..(j + 1) * row]
    }

    pub fn value(&self, j: usize, k: usize, d: usize) -> f64 {
        self.path(j)[k * self.dim + d]
    }

    /// All paths' values of component `d` at time index `k`.
    pub fn slice(&self, k: usize, d: usize) -> Vec<f64> {
        (0..self.n_traj()).map(|j| self.value(j, k, d)).collect()
    }

    pub fn mean_at(&self, k: usize, d: usize) -> f64 {
        let n = self.n_traj() as f64;
        (0..self.n_traj()).map(|j| self.value(j, k, d)).sum::<f64>() / n
    }

    /// Unbiased per-time standard deviation; `None` for fewer than two paths.
    pub fn std_at(&self, k: usize, d: usize) -> Option<f64> {
        let n = self.n_traj();
        if n < 2 {
            return None;
        }
        let m = self.mean_at(k, d);
        let ss: f64 = (0..n).map(|j| (self.value(j, k, d) - m).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }

    /// Keep only the listed paths, in the given order.
    pub fn select(&self, paths: &[usize]) -> Self {
        let values = paths.iter().flat_map(|&j| self.path(j).iter().copied()).collect();
        Self {
            times: self.times.clone(),
            dim: self.dim,
            values,
            inputs: self.inputs.clone(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn to_model_units(&self, s: &Scaling) -> Self {
        self.map_values(|v| s.to_model(v))
    }

    /// `max - min` over every stored value.
    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    }
}
