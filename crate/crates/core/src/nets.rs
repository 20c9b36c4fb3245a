//! Dense feedforward networks over flat parameter vectors.
//!
//! Parameters are flattened layer-major; within a layer the weight matrix is
//! stored row-major (`n_out x n_in`) followed by the bias. Checkpoints and
//! [`ParamPartition`] index sets rely on this order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("network needs at least one layer")]
    NoLayers,
    #[error("layer sizes must be positive")]
    ZeroWidth,
    #[error("expected {expected} activations, got {got}")]
    ActivationCount { expected: usize, got: usize },
    #[error("size mismatch for {what}: expected {expected}, got {got}")]
    Size {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {len} parameters")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("index {0} listed twice in partition")]
    DuplicateIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => crate::autodiff::softplus(x),
            Activation::Linear => x,
        }
    }

    fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
            Activation::Linear => x,
        }
    }
}

/// Offsets of one layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: usize,
    pub bias: usize,
}

impl LayerSlot {
    pub fn end(&self) -> usize {
        self.bias + self.n_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self, NetError> {
        let spec = Self {
            layer_sizes,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Hidden layers share one activation and the output layer is linear.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
    ) -> Result<Self, NetError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(Activation::Linear);
        Self::new(sizes, acts)
    }

    /// Single affine layer `W x + b`.
    pub fn linear(input: usize, output: usize) -> Self {
        Self {
            layer_sizes: vec![input, output],
            activations: vec![Activation::Linear],
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.layer_sizes.len() < 2 {
            return Err(NetError::NoLayers);
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(NetError::ZeroWidth);
        }
        let expected = self.layer_sizes.len() - 1;
        if self.activations.len() != expected {
            return Err(NetError::ActivationCount {
                expected,
                got: self.activations.len(),
            });
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated spec")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn slots(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let slot = LayerSlot {
                    n_in: w[0],
                    n_out: w[1],
                    weights: off,
                    bias: off + w[0] * w[1],
                };
                off = slot.end();
                slot
            })
            .collect()
    }

    /// Uniform in `[-1/sqrt(n_in), 1/sqrt(n_in)]` per layer, weights and biases alike.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> FlatParams {
        let mut values = Vec::with_capacity(self.n_params());
        for slot in self.slots() {
            let bound = 1.0 / (slot.n_in as f64).sqrt();
            for _ in 0..(slot.n_in + 1) * slot.n_out {
                values.push(rng.random_range(-bound..=bound));
            }
        }
        FlatParams::new(values)
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NetError> {
        check_len("parameters", self.n_params(), params.len())?;
        check_len("network input", self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(params, x))
    }

    pub(crate) fn forward_unchecked(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (slot, act) in self.slots().into_iter().zip(&self.activations) {
            let w = &params[slot.weights..slot.bias];
            let b = &params[slot.bias..slot.end()];
            cur = (0..slot.n_out)
                .map(|r| {
                    let row = &w[r * slot.n_in..(r + 1) * slot.n_in];
                    let z: f64 = row.iter().zip(&cur).map(|(a, v)| a * v).sum::<f64>() + b[r];
                    act.apply(z)
                })
                .collect();
        }
        cur
    }

    /// Forward pass recorded on a tape; `params` and `x` may be leaves or views.
    pub fn forward_tape(&self, tape: &mut Tape, params: Var, x: Var) -> Result<Var, NetError> {
        check_len("parameters", self.n_params(), params.len())?;
        check_len("network input", self.input_dim(), x.len())?;
        let mut cur = x;
        for (slot, act) in self.slots().into_iter().zip(&self.activations) {
            let w = params.slice(slot.weights, slot.n_in * slot.n_out);
            let b = params.slice(slot.bias, slot.n_out);
            let z = tape.matvec(w, cur);
            let z = tape.add(z, b);
            cur = act.apply_tape(tape, z);
        }
        Ok(cur)
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NetError> {
    if expected == got {
        Ok(())
    } else {
        Err(NetError::Size {
            what,
            expected,
            got,
        })
    }
}

/// One layer in structured form.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `n_out` rows of `n_in` weights.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    values: Vec<f64>,
}

impl FlatParams {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unflatten(&self, spec: &MlpSpec) -> Result<Vec<Layer>, NetError> {
        check_len("parameters", spec.n_params(), self.len())?;
        Ok(spec
            .slots()
            .into_iter()
            .map(|s| Layer {
                weights: (0..s.n_out)
                    .map(|r| self.values[s.weights + r * s.n_in..s.weights + (r + 1) * s.n_in].to_vec())
                    .collect(),
                bias: self.values[s.bias..s.end()].to_vec(),
            })
            .collect())
    }

    pub fn flatten(layers: &[Layer]) -> Self {
        let mut values = Vec::new();
        for layer in layers {
            for row in &layer.weights {
                values.extend_from_slice(row);
            }
            values.extend_from_slice(&layer.bias);
        }
        Self::new(values)
    }
}

impl From<Vec<f64>> for FlatParams {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Split of a parameter vector into deterministic and stochastic index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamPartition {
    n_params: usize,
    stochastic: Vec<usize>,
    deterministic: Vec<usize>,
}

impl ParamPartition {
    /// `stochastic` lists the sampled indices; everything else is deterministic.
    pub fn new(n_params: usize, stochastic: Vec<usize>) -> Result<Self, NetError> {
        let mut seen = vec![false; n_params];
        for &i in &stochastic {
            if i >= n_params {
                return Err(NetError::IndexOutOfRange {
                    index: i,
                    len: n_params,
                });
            }
            if seen[i] {
                return Err(NetError::DuplicateIndex(i));
            }
            seen[i] = true;
        }
        let deterministic = (0..n_params).filter(|&i| !seen[i]).collect();
        Ok(Self {
            n_params,
            stochastic,
            deterministic,
        })
    }

    pub fn all_stochastic(n_params: usize) -> Self {
        Self::new(n_params, (0..n_params).collect()).expect("valid range")
    }

    pub fn all_deterministic(n_params: usize) -> Self {
        Self::new(n_params, Vec::new()).expect("empty set")
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn stochastic(&self) -> &[usize] {
        &self.stochastic
    }

    pub fn deterministic(&self) -> &[usize] {
        &self.deterministic
    }

    pub fn split(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        check_len("parameters", self.n_params, w.len())?;
        Ok((
            self.deterministic.iter().map(|&i| w[i]).collect(),
            self.stochastic.iter().map(|&i| w[i]).collect(),
        ))
    }

    pub fn merge(&self, w_d: &[f64], w_s: &[f64]) -> Result<FlatParams, NetError> {
        check_len("deterministic parameters", self.deterministic.len(), w_d.len())?;
        check_len("stochastic parameters", self.stochastic.len(), w_s.len())?;
        let mut out = vec![0.0; self.n_params];
        for (&i, &v) in self.deterministic.iter().zip(w_d) {
            out[i] = v;
        }
        for (&i, &v) in self.stochastic.iter().zip(w_s) {
            out[i] = v;
        }
        Ok(FlatParams::new(out))
    }

    /// Tape version of [`merge`](Self::merge).
    pub fn merge_tape(&self, tape: &mut Tape, w_d: Var, w_s: Var) -> Result<Var, NetError> {
        check_len("deterministic parameters", self.deterministic.len(), w_d.len())?;
        check_len("stochastic parameters", self.stochastic.len(), w_s.len())?;
        // position of each full index inside concat(w_d, w_s)
        let mut index = vec![0; self.n_params];
        for (pos, &i) in self.deterministic.iter().enumerate() {
            index[i] = pos;
        }
        for (pos, &i) in self.stochastic.iter().enumerate() {
            index[i] = self.deterministic.len() + pos;
        }
        let joined = tape.concat(&[w_d, w_s]);
        Ok(tape.gather(joined, &index))
    }
}
