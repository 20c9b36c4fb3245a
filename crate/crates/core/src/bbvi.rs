//! Black-box variational inference with a Gaussian surrogate: full covariance
//! for two weights, mean-field otherwise. Reparameterized Monte Carlo estimate
//! of the expected log-likelihood, analytic KL to an isotropic Gaussian prior.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus, AdError, Tape, Var};
use crate::datagen::path_rng;
use crate::loss::{elbo, LikelihoodSpec, LossError, PreparedLikelihood, SigmaEstimate};
use crate::metrics::{w1_per_time, MetricError};
use crate::nets::{NetError, ParamPartition};
use crate::node::{DataModel, NodeError};
use crate::optim::{Adam, AdamConfig};
use crate::trainer::epoch_seed;
use crate::trajectory::TrajectoryEnsemble;

#[derive(Debug, Error)]
pub enum BbviError {
    #[error("non-finite ELBO at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("invalid BBVI configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] NodeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    MeanField,
    /// Two coordinates with a free correlation.
    Full2,
}

/// `N(μ, Σ)` with `Σ = L Lᵀ`. Free parameters are `μ`, `log σ`, and for
/// `Full2` the inverse hyperbolic tangent of the correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSurrogate {
    pub covariance: Covariance,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub atanh_rho: f64,
}

// log(1 - tanh(z)^2) / 2, written to stay finite for large |z|
fn half_log_one_minus_rho2(z: f64) -> f64 {
    z + std::f64::consts::LN_2 - softplus(2.0 * z)
}

impl GaussianSurrogate {
    pub fn mean_field(mu: Vec<f64>, sigma: &[f64]) -> Result<Self, BbviError> {
        if mu.len() != sigma.len() || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(BbviError::Invalid("mean and positive scales must have equal length".into()));
        }
        Ok(Self {
            covariance: Covariance::MeanField,
            mu,
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            atanh_rho: 0.0,
        })
    }

    pub fn full2(mu: [f64; 2], sigma: [f64; 2], rho: f64) -> Result<Self, BbviError> {
        if sigma.iter().any(|s| !(*s > 0.0)) || !(rho.abs() < 1.0) {
            return Err(BbviError::Invalid("need σ > 0 and |ρ| < 1".into()));
        }
        Ok(Self {
            covariance: Covariance::Full2,
            mu: mu.to_vec(),
            log_sigma: sigma.iter().map(|s| s.ln()).collect(),
            atanh_rho: rho.atanh(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn n_free(&self) -> usize {
        match self.covariance {
            Covariance::MeanField => 2 * self.dim(),
            Covariance::Full2 => 5,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.extend(&self.log_sigma);
        if self.covariance == Covariance::Full2 {
            v.push(self.atanh_rho);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_free());
        let d = self.dim();
        self.mu.copy_from_slice(&flat[..d]);
        self.log_sigma.copy_from_slice(&flat[d..2 * d]);
        if self.covariance == Covariance::Full2 {
            self.atanh_rho = flat[4];
        }
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn rho(&self) -> f64 {
        match self.covariance {
            Covariance::MeanField => 0.0,
            Covariance::Full2 => self.atanh_rho.tanh(),
        }
    }

    /// Lower Cholesky factor.
    pub fn cholesky(&self) -> Vec<Vec<f64>> {
        let s = self.sigma();
        let d = self.dim();
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            l[i][i] = s[i];
        }
        if self.covariance == Covariance::Full2 {
            l[1][0] = self.rho() * s[1];
            l[1][1] = s[1] * half_log_one_minus_rho2(self.atanh_rho).exp();
        }
        l
    }

    pub fn covariance_matrix(&self) -> Vec<Vec<f64>> {
        let l = self.cholesky();
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|k| l[i][k] * l[j][k]).sum()).collect())
            .collect()
    }

    /// `μ + L ε`.
    pub fn reparam_sample(&self, eps: &[f64]) -> Vec<f64> {
        assert_eq!(eps.len(), self.dim());
        let l = self.cholesky();
        (0..self.dim())
            .map(|i| self.mu[i] + (0..=i).map(|k| l[i][k] * eps[k]).sum::<f64>())
            .collect()
    }

    pub fn reparam_sample_tape(&self, tape: &mut Tape, flat: Var, eps: &[f64]) -> Var {
        let d = self.dim();
        assert_eq!(eps.len(), d);
        let mu = flat.slice(0, d);
        let ls = flat.slice(d, d);
        let sigma = tape.exp(ls);
        match self.covariance {
            Covariance::MeanField => {
                let e = tape.constant(eps);
                let spread = tape.mul(sigma, e);
                tape.add(mu, spread)
            }
            Covariance::Full2 => {
                let z = flat.at(4);
                let rho = tape.tanh(z);
                let c = half_log_one_minus_rho2_tape(tape, z);
                let c = tape.exp(c);
                let a = tape.scale(rho, eps[0]);
                let b = tape.scale(c, eps[1]);
                let mix = tape.add(a, b);
                let s0 = tape.scale(sigma.at(0), eps[0]);
                let s1 = tape.mul(sigma.at(1), mix);
                let spread = tape.concat(&[s0, s1]);
                tape.add(mu, spread)
            }
        }
    }

    fn log_det(&self) -> f64 {
        let mut v = 2.0 * self.log_sigma.iter().sum::<f64>();
        if self.covariance == Covariance::Full2 {
            v += 2.0 * half_log_one_minus_rho2(self.atanh_rho);
        }
        v
    }

    /// `KL(q ‖ N(center, s² I))`.
    pub fn kl_to_isotropic(&self, center: &[f64], s: f64) -> f64 {
        let d = self.dim() as f64;
        let s2 = s * s;
        let tr: f64 = self.sigma().iter().map(|x| x * x).sum::<f64>() / s2;
        let q: f64 = self.mu.iter().zip(center).map(|(m, c)| (m - c).powi(2)).sum::<f64>() / s2;
        0.5 * (tr + q - d - self.log_det() + d * s2.ln())
    }

    pub fn kl_to_isotropic_tape(&self, tape: &mut Tape, flat: Var, center: &[f64], s: f64) -> Var {
        let d = self.dim();
        let s2 = s * s;
        let mu = flat.slice(0, d);
        let ls = flat.slice(d, d);
        let two_ls = tape.scale(ls, 2.0);
        let var = tape.exp(two_ls);
        let tr = tape.sum(var);
        let c = tape.constant(center);
        let diff = tape.sub(mu, c);
        let sq = tape.square(diff);
        let q = tape.sum(sq);
        let spread = tape.add(tr, q);
        let spread = tape.scale(spread, 0.5 / s2);
        let sum_ls = tape.sum(ls);
        let mut neg_half_logdet = tape.scale(sum_ls, -1.0);
        if self.covariance == Covariance::Full2 {
            let h = half_log_one_minus_rho2_tape(tape, flat.at(4));
            let h = tape.scale(h, -1.0);
            neg_half_logdet = tape.add(neg_half_logdet, h);
        }
        let k = tape.add(spread, neg_half_logdet);
        let offset = tape.scalar_const(0.5 * d as f64 * (s2.ln() - 1.0));
        tape.add(k, offset)
    }

    pub fn log_density(&self, w: &[f64]) -> f64 {
        let l = self.cholesky();
        let d = self.dim();
        // forward substitution
        let mut z = vec![0.0; d];
        for i in 0..d {
            let acc: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
            z[i] = (w[i] - self.mu[i] - acc) / l[i][i];
        }
        let q: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (q + self.log_det() + d as f64 * (2.0 * std::f64::consts::PI).ln())
    }
}

fn half_log_one_minus_rho2_tape(tape: &mut Tape, z: Var) -> Var {
    let two_z = tape.scale(z, 2.0);
    let sp = tape.softplus(two_z);
    let d = tape.sub(z, sp);
    let ln2 = tape.scalar_const(std::f64::consts::LN_2);
    tape.add(d, ln2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbviConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub n_samples: usize,
    pub covariance: Covariance,
    pub init_sigma: f64,
    pub prior_sigma: f64,
    pub n_modes: usize,
    /// Drop the data term and fit the prior alone.
    pub use_likelihood: bool,
    /// Stochastic index set; all parameters when absent. The rest stay at the MLE.
    pub stochastic: Option<Vec<usize>>,
    /// Draws stored in the report.
    pub n_report: usize,
    pub seed: u64,
}

impl Default for BbviConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            adam: AdamConfig::default(),
            n_samples: 8,
            covariance: Covariance::MeanField,
            init_sigma: 0.1,
            prior_sigma: 1.0,
            n_modes: 1,
            use_likelihood: true,
            stochastic: None,
            n_report: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbviRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loglik: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbviReport {
    pub surrogate: GaussianSurrogate,
    pub partition: ParamPartition,
    pub w_mle: Vec<f64>,
    pub w_d: Vec<f64>,
    pub sigma: Option<SigmaEstimate>,
    pub trace: Vec<BbviRecord>,
    pub samples: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
    pub final_w1: Vec<f64>,
    pub seed: u64,
}

impl BbviReport {
    pub fn full_weights(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| self.partition.merge(&self.w_d, s).expect("consistent report").into_vec())
            .collect()
    }
}

fn draw_eps(seed: u64, stream: usize, dim: usize) -> Vec<f64> {
    let mut rng = path_rng(seed, stream as u64);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn fit_bbvi(
    model: &DataModel,
    data: &TrajectoryEnsemble,
    w_mle: &[f64],
    cfg: &BbviConfig,
) -> Result<BbviReport, BbviError> {
    model.validate()?;
    if !cfg.adam.is_valid() || cfg.n_samples == 0 || !(cfg.init_sigma > 0.0) || !(cfg.prior_sigma > 0.0) {
        return Err(BbviError::Invalid("need valid Adam settings, samples ≥ 1 and positive scales".into()));
    }
    if w_mle.len() != model.n_params() {
        return Err(NetError::Size {
            what: "MLE parameters",
            expected: model.n_params(),
            got: w_mle.len(),
        }
        .into());
    }
    let partition = match &cfg.stochastic {
        Some(idx) => ParamPartition::new(model.n_params(), idx.clone())?,
        None => ParamPartition::all_stochastic(model.n_params()),
    };
    let (w_d, center) = partition.split(w_mle)?;
    let dim = center.len();
    let mut q = match cfg.covariance {
        Covariance::MeanField => GaussianSurrogate::mean_field(center.clone(), &vec![cfg.init_sigma; dim])?,
        Covariance::Full2 if dim == 2 => {
            GaussianSurrogate::full2([center[0], center[1]], [cfg.init_sigma; 2], 0.0)?
        }
        Covariance::Full2 => {
            return Err(BbviError::Invalid(format!("full covariance needs 2 weights, got {dim}")));
        }
    };

    let lik = if cfg.use_likelihood {
        let mle_pred = model.predict(w_mle, data.inputs(), data.times())?;
        let (lik, sigma) = LikelihoodSpec::from_data(data, &mle_pred, cfg.n_modes)?;
        Some((PreparedLikelihood::new(data, &lik)?, sigma))
    } else {
        None
    };

    let n_s = cfg.n_samples as f64;
    let mut adam = Adam::new(cfg.adam, q.n_free());
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let flat = q.to_flat();
        let seed = epoch_seed(cfg.seed, epoch);
        let mut grad = vec![0.0; flat.len()];
        let mut logliks = Vec::new();
        if let Some((prep, _)) = &lik {
            let per_sample: Vec<Result<(f64, Vec<f64>), BbviError>> = (0..cfg.n_samples)
                .into_par_iter()
                .map_init(Tape::new, |tape, s| {
                    tape.clear();
                    let eps = draw_eps(seed, s, dim);
                    let p = tape.leaf(&flat);
                    let w_s = q.reparam_sample_tape(tape, p, &eps);
                    let wd = tape.constant(&w_d);
                    let full = partition.merge_tape(tape, wd, w_s)?;
                    let pred = model.predict_tape(tape, full, data.inputs(), data.times())?;
                    let ll = prep.eval_tape(tape, pred);
                    let obj = tape.scale(ll, 1.0 / n_s);
                    let g = tape.backward(obj)?.wrt(p).to_vec();
                    Ok((tape.scalar(ll), g))
                })
                .collect();
            for r in per_sample {
                let (ll, g) = r?;
                logliks.push(ll);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a -= b;
                }
            }
        }
        let mut tape = Tape::new();
        let p = tape.leaf(&flat);
        let k = q.kl_to_isotropic_tape(&mut tape, p, &center, cfg.prior_sigma);
        let kl = tape.scalar(k);
        for (a, b) in grad.iter_mut().zip(tape.backward(k)?.wrt(p)) {
            *a += b;
        }
        let loss = if logliks.is_empty() { kl } else { -elbo(&logliks, kl) };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(BbviError::NonFinite { epoch });
        }
        trace.push(BbviRecord {
            epoch,
            loss,
            loglik: if logliks.is_empty() { 0.0 } else { logliks.iter().sum::<f64>() / n_s },
            kl,
        });
        let mut flat = flat;
        adam.step(&mut flat, &grad);
        q.set_flat(&flat);
    }

    let final_seed = epoch_seed(cfg.seed, cfg.epochs);
    let samples: Vec<Vec<f64>> = (0..cfg.n_report)
        .map(|s| q.reparam_sample(&draw_eps(final_seed, s, dim)))
        .collect();
    let predictions: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|w_s| {
            let full = partition.merge(&w_d, w_s)?;
            Ok(model.predict(full.as_slice(), data.inputs(), data.times())?)
        })
        .collect::<Result<_, BbviError>>()?;
    let data_rows: Vec<Vec<f64>> = (0..data.n_traj()).map(|j| data.path(j).to_vec()).collect();
    let final_w1 = if predictions.is_empty() {
        Vec::new()
    } else {
        w1_per_time(&predictions, &data_rows)?
    };
    Ok(BbviReport {
        surrogate: q,
        partition,
        w_mle: w_mle.to_vec(),
        w_d,
        sigma: lik.map(|(_, s)| s),
        trace,
        samples,
        predictions,
        final_w1,
        seed: cfg.seed,
    })
}
