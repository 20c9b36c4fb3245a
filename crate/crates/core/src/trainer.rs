//! Training loop: MLE pretraining, then joint updates of the score network θ
//! and the deterministic weights `w_d` on the negated ELBO.
//!
//! Each epoch restarts every replica from the perturbed MLE, integrates the
//! sampler on its own tape with the Brownian increments as constants, runs the
//! data model on the replica's endpoint, and backpropagates the replica's
//! share of the ELBO. Per-replica gradients are summed in replica order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Tape, Var};
use crate::loss::{elbo, LikelihoodSpec, LossError, PreparedLikelihood, SigmaEstimate};
use crate::metrics::{w1_per_time, MetricError};
use crate::nets::{Activation, FlatParams, MlpSpec, NetError, ParamPartition};
use crate::node::{DataModel, NodeError};
use crate::optim::{Adam, AdamConfig};
use crate::sampler::{diverged, simulate_replicas, ReplicaNoise, SamplerConfig, SamplerError, ScoreNet};
use crate::trajectory::TrajectoryEnsemble;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("epoch {epoch}: replica {replica} diverged at sampler step {step}")]
    Diverged {
        epoch: usize,
        replica: usize,
        step: usize,
        /// State reached before the failing epoch.
        partial: Box<TrainReport>,
    },
    #[error("invalid training configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
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
pub enum Variant {
    Full,
    BllFixed,
    BllReopt,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::BllFixed => "bll-fixed",
            Variant::BllReopt => "bll-reopt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variant::Full, Variant::BllFixed, Variant::BllReopt]
            .into_iter()
            .find(|v| v.name() == s)
    }

    /// All parameters for `Full`, the final layer for the BLL variants.
    pub fn partition(self, model: &DataModel) -> ParamPartition {
        match self {
            Variant::Full => ParamPartition::all_stochastic(model.n_params()),
            _ => ParamPartition::new(model.n_params(), model.last_layer_indices()).expect("valid layer indices"),
        }
    }

    pub fn updates_deterministic(self) -> bool {
        self != Variant::BllFixed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            adam: AdamConfig::with_lr(1e-2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    /// Lowest-loss parameters seen.
    pub params: FlatParams,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub trace: Vec<f64>,
}

/// Initial state of the data model for a dataset: its mean at the first time.
pub fn data_initial_state(data: &TrajectoryEnsemble) -> Vec<f64> {
    (0..data.dim()).map(|d| data.mean_at(0, d)).collect()
}

/// Mean-prediction MLE under a single-mode likelihood with σ equal to the
/// per-time data spread. Starts from `init` or a seeded initialization.
pub fn fit_mle(
    model: &DataModel,
    data: &TrajectoryEnsemble,
    cfg: &MleConfig,
    init: Option<&[f64]>,
) -> Result<MleResult, TrainError> {
    model.validate()?;
    if !cfg.adam.is_valid() {
        return Err(TrainError::Invalid("Adam settings out of range".into()));
    }
    let times = data.times();
    let inputs = data.inputs();
    let row = data.n_times() * data.dim();
    if model.obs_dim() != data.dim() {
        return Err(TrainError::Invalid(format!(
            "model observes {} components, data has {}",
            model.obs_dim(),
            data.dim()
        )));
    }
    let mean: Vec<f64> = (0..row)
        .map(|i| (0..data.n_traj()).map(|j| data.path(j)[i]).sum::<f64>() / data.n_traj() as f64)
        .collect();
    let (lik, _) = LikelihoodSpec::from_data(data, &mean, 1)?;
    let prep = PreparedLikelihood::new(data, &lik)?;

    let mut params = match init {
        Some(p) => p.to_vec(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut p = Vec::with_capacity(model.n_params());
            if let Some(spec) = &model.rhs {
                p.extend(spec.init_params(&mut rng).into_vec());
            }
            if let crate::node::Observation::Net(spec) = &model.obs {
                p.extend(spec.init_params(&mut rng).into_vec());
            }
            p
        }
    };
    if params.len() != model.n_params() {
        return Err(NetError::Size {
            what: "initial parameters",
            expected: model.n_params(),
            got: params.len(),
        }
        .into());
    }

    let mut adam = Adam::new(cfg.adam, params.len());
    let mut tape = Tape::new();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut best = (f64::INFINITY, params.clone());
    let mut initial = f64::NAN;
    for epoch in 0..=cfg.epochs {
        tape.clear();
        let p = tape.leaf(&params);
        let pred = model.predict_tape(&mut tape, p, inputs, times)?;
        let ll = prep.eval_tape(&mut tape, pred);
        let loss = -tape.scalar(ll);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if epoch == 0 {
            initial = loss;
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        if epoch == cfg.epochs {
            break;
        }
        let g: Vec<f64> = tape.backward(ll)?.wrt(p).iter().map(|v| -v).collect();
        adam.step(&mut params, &g);
    }
    Ok(MleResult {
        params: FlatParams::new(best.1),
        initial_loss: initial,
        best_loss: best.0,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unroll {
    Full,
    /// Differentiate only through the last `n` sampler steps.
    Last(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorCenter {
    Mle,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreInit {
    Uniform,
    /// Uniform hidden layers, zero output layer: the first epoch samples pure diffusion.
    ZeroOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub sampler: SamplerConfig,
    pub score_hidden: Vec<usize>,
    pub score_activation: Activation,
    pub score_init: ScoreInit,
    pub n_modes: usize,
    /// Multiplies the path KL; 0 drops the prior.
    pub kl_weight: f64,
    pub prior_center: PriorCenter,
    pub unroll: Unroll,
    /// Overrides the variant's stochastic index set.
    pub stochastic: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            epochs: 100,
            adam: AdamConfig::default(),
            sampler: SamplerConfig::default(),
            score_hidden: vec![2, 2],
            score_activation: Activation::Tanh,
            score_init: ScoreInit::ZeroOutput,
            n_modes: 1,
            kl_weight: 1.0,
            prior_center: PriorCenter::Mle,
            unroll: Unroll::Full,
            stochastic: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.sampler.validate()?;
        if !self.adam.is_valid() {
            return Err(TrainError::Invalid("Adam settings out of range".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(TrainError::Invalid("kl_weight must be non-negative".into()));
        }
        if !(1..=2).contains(&self.n_modes) {
            return Err(TrainError::Invalid("n_modes must be 1 or 2".into()));
        }
        if self.score_hidden.contains(&0) {
            return Err(TrainError::Invalid("score hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Derived per-epoch sampler seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Negated ELBO.
    pub loss: f64,
    pub loglik: f64,
    pub kl: f64,
    /// Time-averaged W1 between replica predictions and data.
    pub w1: f64,
    /// Mean and standard deviation of the stochastic weights over replicas.
    pub w_mean: Vec<f64>,
    pub w_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub partition: ParamPartition,
    pub w_mle: Vec<f64>,
    pub w_d: Vec<f64>,
    pub score: Option<ScoreNet>,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub sigma: SigmaEstimate,
    pub trace: Vec<EpochRecord>,
    /// Stochastic weights of each replica at `τ_f`.
    pub endpoints: Vec<Vec<f64>>,
    /// Model output of each replica, `n_times * dim`.
    pub predictions: Vec<Vec<f64>>,
    pub final_w1: Vec<f64>,
}

impl TrainReport {
    /// Full weight vectors `{w_d, w_s}` of the ensemble.
    pub fn full_weights(&self) -> Vec<Vec<f64>> {
        self.endpoints
            .iter()
            .map(|s| self.partition.merge(&self.w_d, s).expect("consistent report").into_vec())
            .collect()
    }

    /// Fresh endpoints from the trained sampler under another seed.
    pub fn sample_posterior(&self, seed: u64, n_replicas: usize) -> Result<Vec<Vec<f64>>, SamplerError> {
        let cfg = SamplerConfig {
            seed,
            n_replicas,
            ..self.sampler.clone()
        };
        let (_, w_init) = self.partition.split(&self.w_mle)?;
        match &self.score {
            Some(score) => Ok(simulate_replicas(score, &cfg, &w_init, false)?.endpoints),
            None => Ok(vec![Vec::new(); n_replicas]),
        }
    }
}

struct Shared<'a> {
    model: &'a DataModel,
    data: &'a TrajectoryEnsemble,
    prep: &'a PreparedLikelihood,
    partition: &'a ParamPartition,
    score: Option<&'a ScoreNet>,
    sampler: SamplerConfig,
    w_init: &'a [f64],
    w_d: &'a [f64],
    kl_weight: f64,
    unroll: Unroll,
}

struct Outcome {
    loglik: f64,
    kl: f64,
    grad_theta: Vec<f64>,
    grad_wd: Vec<f64>,
    endpoint: Vec<f64>,
    prediction: Vec<f64>,
}

enum ReplicaFailure {
    Diverged { step: usize },
    Other(TrainError),
}

impl<E: Into<TrainError>> From<E> for ReplicaFailure {
    fn from(e: E) -> Self {
        ReplicaFailure::Other(e.into())
    }
}

fn replica_pass(s: &Shared, tape: &mut Tape, replica: usize) -> Result<Outcome, ReplicaFailure> {
    tape.clear();
    let cfg = &s.sampler;
    let n_r = cfg.n_replicas as f64;
    let mut noise = ReplicaNoise::new(cfg, replica);
    let start = noise.initial(s.w_init, cfg.eps_init);
    let dim = start.len();

    let theta = s.score.map(|sc| tape.leaf(sc.theta.as_slice()));
    let wd = tape.leaf(s.w_d);
    let mut kl_plain = 0.0;
    let mut kl_terms: Vec<Var> = Vec::new();

    let w_s = match s.score {
        None => tape.constant(&start),
        Some(score) => {
            let taped_from = match s.unroll {
                Unroll::Full => 0,
                Unroll::Last(k) => cfg.n_steps.saturating_sub(k),
            };
            let sqrt2 = std::f64::consts::SQRT_2;
            let mut w = start;
            for step in 0..taped_from {
                let gamma = cfg.schedule.gamma(step, cfg.n_steps);
                let f = crate::sampler::Drift::drift(score, &w);
                if cfg.schedule.is_shared(step, cfg.n_steps) {
                    kl_plain += f
                        .iter()
                        .zip(w.iter().zip(&score.center))
                        .map(|(f, (w, c))| (f - (c - w)).powi(2))
                        .sum::<f64>();
                }
                let db = noise.increment(dim);
                for i in 0..dim {
                    w[i] += f[i] * cfg.dtau + gamma * sqrt2 * db[i];
                }
                if diverged(&w) {
                    return Err(ReplicaFailure::Diverged { step });
                }
            }
            let theta = theta.expect("score present");
            let center = tape.constant(&score.center);
            let mut wv = tape.constant(&w);
            for step in taped_from..cfg.n_steps {
                let gamma = cfg.schedule.gamma(step, cfg.n_steps);
                let f = score.drift_tape(tape, theta, center, wv);
                if s.kl_weight > 0.0 && cfg.schedule.is_shared(step, cfg.n_steps) {
                    let f0 = tape.sub(center, wv);
                    let d = tape.sub(f, f0);
                    let q = tape.square(d);
                    kl_terms.push(tape.sum(q));
                }
                let drift = tape.scale(f, cfg.dtau);
                let db: Vec<f64> = noise.increment(dim).iter().map(|b| gamma * sqrt2 * b).collect();
                let db = tape.constant(&db);
                let moved = tape.add(wv, drift);
                wv = tape.add(moved, db);
                if diverged(tape.value(wv)) {
                    return Err(ReplicaFailure::Diverged { step });
                }
            }
            wv
        }
    };

    let full = s.partition.merge_tape(tape, wd, w_s)?;
    let pred = s.model.predict_tape(tape, full, s.data.inputs(), s.data.times())?;
    let ll = s.prep.eval_tape(tape, pred);
    // all shared-γ steps run at γ = 1
    let kl_scale = 0.5 * cfg.dtau;
    let mut objective = tape.scale(ll, 1.0 / n_r);
    let mut kl = kl_plain * kl_scale;
    if !kl_terms.is_empty() {
        let k = tape.concat(&kl_terms);
        let k = tape.sum(k);
        let k = tape.scale(k, kl_scale);
        kl += tape.scalar(k);
        let penalty = tape.scale(k, -s.kl_weight / n_r);
        objective = tape.add(objective, penalty);
    }
    let loglik = tape.scalar(ll);
    let endpoint = tape.value(w_s).to_vec();

    let prediction = tape.value(pred).to_vec();
    let grads = tape.backward(objective)?;
    // minimize the negated ELBO
    let neg = |v: &[f64]| v.iter().map(|g| -g).collect::<Vec<f64>>();
    Ok(Outcome {
        loglik,
        kl,
        grad_theta: theta.map_or_else(Vec::new, |t| neg(grads.wrt(t))),
        grad_wd: neg(grads.wrt(wd)),
        endpoint,
        prediction,
    })
}

fn data_table(data: &TrajectoryEnsemble) -> Vec<Vec<f64>> {
    (0..data.n_traj()).map(|j| data.path(j).to_vec()).collect()
}

fn predict_all(
    model: &DataModel,
    data: &TrajectoryEnsemble,
    partition: &ParamPartition,
    w_d: &[f64],
    endpoints: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, TrainError> {
    endpoints
        .par_iter()
        .map(|w_s| {
            let full = partition.merge(w_d, w_s)?;
            Ok(model.predict(full.as_slice(), data.inputs(), data.times())?)
        })
        .collect()
}

/// Train with a per-epoch callback receiving the epoch record, θ, and `w_d`
/// after the update.
pub fn train_with_observer(
    model: &DataModel,
    data: &TrajectoryEnsemble,
    w_mle: &[f64],
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord, &[f64], &[f64]),
) -> Result<TrainReport, TrainError> {
    model.validate()?;
    cfg.validate()?;
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
        None => cfg.variant.partition(model),
    };
    let (w_d_mle, w_init) = partition.split(w_mle)?;
    let mle_pred = model.predict(w_mle, data.inputs(), data.times())?;
    let (lik, sigma) = LikelihoodSpec::from_data(data, &mle_pred, cfg.n_modes)?;
    let prep = PreparedLikelihood::new(data, &lik)?;
    let data_rows = data_table(data);

    let mut score = if w_init.is_empty() {
        None
    } else {
        let dim = w_init.len();
        let spec = MlpSpec::with_hidden(dim, &cfg.score_hidden, dim, cfg.score_activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, usize::MAX));
        let mut theta = spec.init_params(&mut rng);
        if cfg.score_init == ScoreInit::ZeroOutput {
            let last = *spec.slots().last().expect("at least one layer");
            theta.as_mut_slice()[last.weights..last.end()].fill(0.0);
        }
        let center = match cfg.prior_center {
            PriorCenter::Mle => w_init.clone(),
            PriorCenter::Zero => vec![0.0; dim],
        };
        Some(ScoreNet::new(spec, theta, center)?)
    };
    let mut w_d = w_d_mle.clone();
    let mut adam_theta = Adam::new(cfg.adam, score.as_ref().map_or(0, |s| s.theta.len()));
    let mut adam_wd = Adam::new(cfg.adam, w_d.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    let report = |trace: Vec<EpochRecord>,
                  score: Option<ScoreNet>,
                  w_d: Vec<f64>,
                  endpoints: Vec<Vec<f64>>,
                  predictions: Vec<Vec<f64>>,
                  final_w1: Vec<f64>| TrainReport {
        variant: cfg.variant,
        partition: partition.clone(),
        w_mle: w_mle.to_vec(),
        w_d,
        score,
        sampler: SamplerConfig {
            seed: epoch_seed(cfg.seed, cfg.epochs),
            ..cfg.sampler.clone()
        },
        seed: cfg.seed,
        sigma: sigma.clone(),
        trace,
        endpoints,
        predictions,
        final_w1,
    };

    for epoch in 0..cfg.epochs {
        let sampler = SamplerConfig {
            seed: epoch_seed(cfg.seed, epoch),
            ..cfg.sampler.clone()
        };
        let shared = Shared {
            model,
            data,
            prep: &prep,
            partition: &partition,
            score: score.as_ref(),
            sampler,
            w_init: &w_init,
            w_d: &w_d,
            kl_weight: cfg.kl_weight,
            unroll: cfg.unroll,
        };
        let outcomes: Vec<Result<Outcome, ReplicaFailure>> = (0..cfg.sampler.n_replicas)
            .into_par_iter()
            .map_init(Tape::new, |tape, r| replica_pass(&shared, tape, r))
            .collect();
        let mut done = Vec::with_capacity(outcomes.len());
        for (replica, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(o) => done.push(o),
                Err(ReplicaFailure::Diverged { step }) => {
                    let partial = report(trace, score, w_d, Vec::new(), Vec::new(), Vec::new());
                    return Err(TrainError::Diverged {
                        epoch,
                        replica,
                        step,
                        partial: Box::new(partial),
                    });
                }
                Err(ReplicaFailure::Other(e)) => return Err(e),
            }
        }

        let logliks: Vec<f64> = done.iter().map(|o| o.loglik).collect();
        let kl = done.iter().map(|o| o.kl).sum::<f64>() / done.len() as f64;
        let loss = -elbo(&logliks, cfg.kl_weight * kl);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let preds: Vec<Vec<f64>> = done.iter().map(|o| o.prediction.clone()).collect();
        let w1 = w1_per_time(&preds, &data_rows)?;
        let n = done.len() as f64;
        let dim = w_init.len();
        let w_mean: Vec<f64> = (0..dim).map(|i| done.iter().map(|o| o.endpoint[i]).sum::<f64>() / n).collect();
        let w_std: Vec<f64> = (0..dim)
            .map(|i| {
                let ss: f64 = done.iter().map(|o| (o.endpoint[i] - w_mean[i]).powi(2)).sum();
                (ss / (n - 1.0).max(1.0)).sqrt()
            })
            .collect();
        let record = EpochRecord {
            epoch,
            loss,
            loglik: logliks.iter().sum::<f64>() / n,
            kl,
            w1: w1.iter().sum::<f64>() / w1.len() as f64,
            w_mean,
            w_std,
        };

        if let Some(sc) = score.as_mut() {
            let mut g = vec![0.0; sc.theta.len()];
            for o in &done {
                for (a, b) in g.iter_mut().zip(&o.grad_theta) {
                    *a += b;
                }
            }
            adam_theta.step(sc.theta.as_mut_slice(), &g);
        }
        if cfg.variant.updates_deterministic() && !w_d.is_empty() {
            let mut g = vec![0.0; w_d.len()];
            for o in &done {
                for (a, b) in g.iter_mut().zip(&o.grad_wd) {
                    *a += b;
                }
            }
            adam_wd.step(&mut w_d, &g);
        } else {
            assert!(
                w_d.iter().zip(&w_d_mle).all(|(a, b)| a.to_bits() == b.to_bits()),
                "fixed deterministic weights changed"
            );
        }
        observer(&record, score.as_ref().map_or(&[][..], |s| s.theta.as_slice()), &w_d);
        trace.push(record);
    }

    let final_cfg = SamplerConfig {
        seed: epoch_seed(cfg.seed, cfg.epochs),
        ..cfg.sampler.clone()
    };
    let endpoints = match (&score, cfg.epochs) {
        (Some(sc), e) if e > 0 => simulate_replicas(sc, &final_cfg, &w_init, false)?.endpoints,
        _ => (0..final_cfg.n_replicas)
            .map(|r| ReplicaNoise::new(&final_cfg, r).initial(&w_init, final_cfg.eps_init))
            .collect(),
    };
    let predictions = predict_all(model, data, &partition, &w_d, &endpoints)?;
    let final_w1 = w1_per_time(&predictions, &data_rows)?;
    Ok(report(trace, score, w_d, endpoints, predictions, final_w1))
}

pub fn train(
    model: &DataModel,
    data: &TrajectoryEnsemble,
    w_mle: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with_observer(model, data, w_mle, cfg, &mut |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_ou_dataset, NormalParams, OuDataConfig, TimeGrid};
    use crate::sampler::GammaSchedule;

    fn single_ou(n_traj: usize) -> TrajectoryEnsemble {
        let cfg = OuDataConfig {
            rate: NormalParams { mean: 8.0, std: 0.0 },
            level: NormalParams { mean: 1.0, std: 0.0 },
            initial: NormalParams { mean: 2.0, std: 0.0 },
            grid: TimeGrid {
                start: 0.0,
                end: 1.0,
                points: 51,
            },
            n_traj,
            ..OuDataConfig::default()
        };
        generate_ou_dataset(&cfg, 0).unwrap()
    }

    fn small_ou() -> TrajectoryEnsemble {
        let cfg = OuDataConfig {
            grid: TimeGrid {
                start: 0.0,
                end: 1.0,
                points: 21,
            },
            n_traj: 64,
            ..OuDataConfig::default()
        };
        generate_ou_dataset(&cfg, 3).unwrap()
    }

    fn quick_cfg(variant: Variant, epochs: usize) -> TrainConfig {
        TrainConfig {
            variant,
            epochs,
            adam: AdamConfig::with_lr(1e-2),
            sampler: SamplerConfig {
                dtau: 1e-2,
                n_steps: 40,
                n_replicas: 4,
                schedule: GammaSchedule::constant(),
                ..SamplerConfig::default()
            },
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mle_recovers_single_ou_parameters() {
        let data = single_ou(4);
        // the exactly-fitting data model gives σ = 0 everywhere; the σ floor
        // keeps the likelihood finite. Substeps keep the Heun bias below 1e-3.
        let model = DataModel {
            substeps: 8,
            ..DataModel::linear_scalar(2.0)
        };
        let coarse = MleConfig {
            epochs: 5000,
            adam: AdamConfig::with_lr(0.05),
            seed: 1,
        };
        let fine = MleConfig {
            epochs: 5000,
            adam: AdamConfig::with_lr(1e-3),
            seed: 1,
        };
        let first = fit_mle(&model, &data, &coarse, Some(&[-1.0, 1.0])).unwrap();
        let r = fit_mle(&model, &data, &fine, Some(first.params.as_slice())).unwrap();
        let p = r.params.as_slice();
        assert!((p[0] + 8.0).abs() < 1e-2 && (p[1] - 8.0).abs() < 1e-2, "{p:?}");
        assert!(r.best_loss <= r.initial_loss);
    }

    #[test]
    fn mle_from_optimum_does_not_degrade() {
        let data = small_ou();
        let model = DataModel::linear_scalar(data_initial_state(&data)[0]);
        let mut p = vec![-1.0, 1.0];
        for lr in [0.05, 1e-3] {
            let cfg = MleConfig {
                epochs: 4000,
                adam: AdamConfig::with_lr(lr),
                seed: 0,
            };
            p = fit_mle(&model, &data, &cfg, Some(&p)).unwrap().params.into_vec();
        }
        let cfg = MleConfig {
            epochs: 20,
            ..MleConfig::default()
        };
        let again = fit_mle(&model, &data, &cfg, Some(&p)).unwrap();
        assert!(again.best_loss <= again.initial_loss);
        for (a, b) in again.params.as_slice().iter().zip(&p) {
            assert!((a - b).abs() <= cfg.epochs as f64 * cfg.adam.lr);
        }
    }

    #[test]
    fn zero_epochs_give_perturbed_mle() {
        let data = small_ou();
        let model = DataModel::linear_scalar(data_initial_state(&data)[0]);
        let r = train(&model, &data, &[-8.0, 8.0], &quick_cfg(Variant::Full, 0)).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.endpoints.len(), 4);
        for e in &r.endpoints {
            assert!((e[0] + 8.0).abs() < 1e-4 && (e[1] - 8.0).abs() < 1e-4);
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = small_ou();
        let model = DataModel::linear_scalar(data_initial_state(&data)[0]);
        let a = train(&model, &data, &[-8.0, 8.0], &quick_cfg(Variant::Full, 3)).unwrap();
        let b = train(&model, &data, &[-8.0, 8.0], &quick_cfg(Variant::Full, 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 3);
        assert_eq!(a.endpoints.len(), 4);
    }

    #[test]
    fn empty_stochastic_set_is_continued_mle() {
        let data = small_ou();
        let model = DataModel::linear_scalar(data_initial_state(&data)[0]);
        let cfg = TrainConfig {
            stochastic: Some(Vec::new()),
            ..quick_cfg(Variant::BllReopt, 2)
        };
        let r = train(&model, &data, &[-7.0, 7.5], &cfg).unwrap();
        assert!(r.score.is_none());
        for rec in &r.trace {
            assert_eq!(rec.kl, 0.0);
            assert_eq!(rec.loss, -rec.loglik);
        }
        assert_ne!(r.w_d, vec![-7.0, 7.5]);
    }

    #[test]
    fn truncated_unroll_matches_full_on_values() {
        let data = small_ou();
        let model = DataModel::linear_scalar(data_initial_state(&data)[0]);
        let full = train(&model, &data, &[-8.0, 8.0], &quick_cfg(Variant::Full, 1)).unwrap();
        let cut = train(
            &model,
            &data,
            &[-8.0, 8.0],
            &TrainConfig {
                unroll: Unroll::Last(10),
                ..quick_cfg(Variant::Full, 1)
            },
        )
        .unwrap();
        let (a, b) = (&full.trace[0], &cut.trace[0]);
        assert!((a.loglik - b.loglik).abs() <= 1e-9 * a.loglik.abs());
        assert!((a.kl - b.kl).abs() <= 1e-9 * a.kl.abs().max(1.0));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::Full, Variant::BllFixed, Variant::BllReopt] {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("bll"), None);
    }
}
