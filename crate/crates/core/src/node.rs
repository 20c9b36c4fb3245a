//! The data model: a hidden state driven by `dh/dt = NN_R([h, x]; w_R)`,
//! integrated with Heun's predictor/corrector, and an observation map
//! `Y = Z([h, x]; w_Z)`.
//!
//! The flat parameter vector of a [`DataModel`] holds the rhs network first
//! and the observation network second.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::nets::{MlpSpec, NetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NodeError {
    #[error("non-finite hidden state at step {step}")]
    NonFinite { step: usize },
    #[error("invalid data model: {0}")]
    Invalid(String),
    #[error("{what}: expected {expected}, got {got}")]
    Size {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observation {
    Identity,
    Net(MlpSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModel {
    pub rhs: Option<MlpSpec>,
    pub obs: Observation,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub h0: Vec<f64>,
    /// Heun steps per data interval.
    pub substeps: usize,
}

/// Predictor and corrected state of one Heun step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeunStep {
    pub predictor: Vec<f64>,
    pub next: Vec<f64>,
}

/// One Heun step of `dh/dt = rhs(h)`, with the input already fixed at
/// `x_{n+1}` inside `rhs`.
pub fn heun_step(rhs: impl Fn(&[f64]) -> Vec<f64>, h: &[f64], dt: f64) -> HeunStep {
    let r0 = rhs(h);
    let predictor: Vec<f64> = h.iter().zip(&r0).map(|(h, r)| h + dt * r).collect();
    let r1 = rhs(&predictor);
    let next = h
        .iter()
        .zip(r0.iter().zip(&r1))
        .map(|(h, (a, b))| h + 0.5 * dt * (a + b))
        .collect();
    HeunStep { predictor, next }
}

impl DataModel {
    /// `dy/dt = W y + b` observed directly; parameters `[W, b]`.
    pub fn linear_scalar(h0: f64) -> Self {
        Self {
            rhs: Some(MlpSpec::linear(1, 1)),
            obs: Observation::Identity,
            hidden_dim: 1,
            input_dim: 0,
            h0: vec![h0],
            substeps: 1,
        }
    }

    /// Static map `Y = NN_Z(x)` without hidden state.
    pub fn static_net(obs: MlpSpec) -> Self {
        Self {
            input_dim: obs.input_dim(),
            rhs: None,
            obs: Observation::Net(obs),
            hidden_dim: 0,
            h0: Vec::new(),
            substeps: 1,
        }
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        if self.h0.len() != self.hidden_dim {
            return Err(NodeError::Size {
                what: "initial state",
                expected: self.hidden_dim,
                got: self.h0.len(),
            });
        }
        if self.substeps == 0 {
            return Err(NodeError::Invalid("substeps must be positive".into()));
        }
        match &self.rhs {
            Some(spec) => {
                spec.validate()?;
                if spec.input_dim() != self.hidden_dim + self.input_dim || spec.output_dim() != self.hidden_dim {
                    return Err(NodeError::Invalid(format!(
                        "rhs network must map {} inputs to {} outputs",
                        self.hidden_dim + self.input_dim,
                        self.hidden_dim
                    )));
                }
            }
            None if self.hidden_dim > 0 => {
                return Err(NodeError::Invalid("hidden state without rhs network".into()));
            }
            None => {}
        }
        match &self.obs {
            Observation::Identity if self.hidden_dim == 0 => {
                Err(NodeError::Invalid("identity observation needs a hidden state".into()))
            }
            Observation::Identity => Ok(()),
            Observation::Net(spec) => {
                spec.validate()?;
                if spec.input_dim() != self.hidden_dim + self.input_dim {
                    return Err(NodeError::Invalid(format!(
                        "observation network must take {} inputs",
                        self.hidden_dim + self.input_dim
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn n_rhs_params(&self) -> usize {
        self.rhs.as_ref().map_or(0, MlpSpec::n_params)
    }

    pub fn n_obs_params(&self) -> usize {
        match &self.obs {
            Observation::Identity => 0,
            Observation::Net(spec) => spec.n_params(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_rhs_params() + self.n_obs_params()
    }

    pub fn obs_dim(&self) -> usize {
        match &self.obs {
            Observation::Identity => self.hidden_dim,
            Observation::Net(spec) => spec.output_dim(),
        }
    }

    /// Flat indices of the final layer (weights and bias) of the observation
    /// network, or of the rhs network when the observation is the identity.
    pub fn last_layer_indices(&self) -> Vec<usize> {
        let (spec, base) = match &self.obs {
            Observation::Net(spec) => (spec, self.n_rhs_params()),
            Observation::Identity => (self.rhs.as_ref().expect("validated model"), 0),
        };
        let last = *spec.slots().last().expect("validated spec");
        (base + last.weights..base + last.end()).collect()
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NodeError> {
        if params.len() != self.n_params() {
            return Err(NodeError::Size {
                what: "model parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: Option<&[Vec<f64>]>, n_times: usize) -> Result<(), NodeError> {
        match inputs {
            None if self.input_dim == 0 => Ok(()),
            None => Err(NodeError::Invalid("model expects exogenous inputs".into())),
            Some(rows) => {
                if rows.len() != n_times {
                    return Err(NodeError::Size {
                        what: "input rows",
                        expected: n_times,
                        got: rows.len(),
                    });
                }
                if let Some(r) = rows.iter().find(|r| r.len() != self.input_dim) {
                    return Err(NodeError::Size {
                        what: "input width",
                        expected: self.input_dim,
                        got: r.len(),
                    });
                }
                Ok(())
            }
        }
    }

    fn rhs_value(&self, p_rhs: &[f64], h: &[f64], x: &[f64]) -> Vec<f64> {
        let spec = self.rhs.as_ref().expect("rhs present");
        let mut z = Vec::with_capacity(h.len() + x.len());
        z.extend_from_slice(h);
        z.extend_from_slice(x);
        spec.forward_unchecked(p_rhs, &z)
    }

    /// Hidden states at every grid time, starting from `h0`.
    pub fn integrate(
        &self,
        params: &[f64],
        inputs: Option<&[Vec<f64>]>,
        times: &[f64],
    ) -> Result<Vec<Vec<f64>>, NodeError> {
        self.check_params(params)?;
        self.check_inputs(inputs, times.len())?;
        let mut h = self.h0.clone();
        let mut out = Vec::with_capacity(times.len());
        out.push(h.clone());
        if self.rhs.is_none() {
            out.resize(times.len(), h);
            return Ok(out);
        }
        let p_rhs = &params[..self.n_rhs_params()];
        for n in 0..times.len().saturating_sub(1) {
            let x = inputs.map_or(&[][..], |rows| &rows[n + 1][..]);
            let dt = (times[n + 1] - times[n]) / self.substeps as f64;
            for _ in 0..self.substeps {
                h = heun_step(|s| self.rhs_value(p_rhs, s, x), &h, dt).next;
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(NodeError::NonFinite { step: n + 1 });
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn observe(&self, params: &[f64], h: &[f64], x: &[f64]) -> Result<Vec<f64>, NodeError> {
        self.check_params(params)?;
        match &self.obs {
            Observation::Identity => Ok(h.to_vec()),
            Observation::Net(spec) => {
                let z = [h, x].concat();
                Ok(spec.forward(&params[self.n_rhs_params()..], &z)?)
            }
        }
    }

    /// Observables at every grid time, flattened time-major.
    pub fn predict(&self, params: &[f64], inputs: Option<&[Vec<f64>]>, times: &[f64]) -> Result<Vec<f64>, NodeError> {
        let hs = self.integrate(params, inputs, times)?;
        let mut out = Vec::with_capacity(times.len() * self.obs_dim());
        for (k, h) in hs.iter().enumerate() {
            let x = inputs.map_or(&[][..], |rows| &rows[k][..]);
            out.extend(self.observe(params, h, x)?);
        }
        Ok(out)
    }

    /// Tape version of [`predict`](Self::predict); `params` is the full flat
    /// parameter vector.
    pub fn predict_tape(
        &self,
        tape: &mut Tape,
        params: Var,
        inputs: Option<&[Vec<f64>]>,
        times: &[f64],
    ) -> Result<Var, NodeError> {
        if params.len() != self.n_params() {
            return Err(NodeError::Size {
                what: "model parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        self.check_inputs(inputs, times.len())?;
        let n_rhs = self.n_rhs_params();
        let p_rhs = params.slice(0, n_rhs);
        let p_obs = params.slice(n_rhs, self.n_obs_params());
        let xs: Vec<Var> = (0..times.len())
            .map(|k| tape.constant(inputs.map_or(&[][..], |rows| &rows[k][..])))
            .collect();

        let mut h = tape.constant(&self.h0);
        let mut states = Vec::with_capacity(times.len());
        states.push(h);
        if let Some(spec) = &self.rhs {
            for n in 0..times.len() - 1 {
                let dt = (times[n + 1] - times[n]) / self.substeps as f64;
                for _ in 0..self.substeps {
                    let z = tape.concat(&[h, xs[n + 1]]);
                    let r0 = spec.forward_tape(tape, p_rhs, z)?;
                    let step = tape.scale(r0, dt);
                    let hp = tape.add(h, step);
                    let z = tape.concat(&[hp, xs[n + 1]]);
                    let r1 = spec.forward_tape(tape, p_rhs, z)?;
                    let r = tape.add(r0, r1);
                    let step = tape.scale(r, 0.5 * dt);
                    h = tape.add(h, step);
                }
                if tape.value(h).iter().any(|v| !v.is_finite()) {
                    return Err(NodeError::NonFinite { step: n + 1 });
                }
                states.push(h);
            }
        } else {
            states.resize(times.len(), h);
        }

        let outs = match &self.obs {
            Observation::Identity => states,
            Observation::Net(spec) => {
                let mut outs = Vec::with_capacity(times.len());
                for (h, x) in states.into_iter().zip(xs) {
                    let z = tape.concat(&[h, x]);
                    outs.push(spec.forward_tape(tape, p_obs, z)?);
                }
                outs
            }
        };
        Ok(tape.concat(&outs))
    }
}
