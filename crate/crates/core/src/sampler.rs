//! Langevin weight sampler: Euler–Maruyama integration of
//! `dw = f(w) dτ + γ √2 dB` over independent replicas.
//!
//! Replica `r` draws its initial perturbation and every Brownian increment
//! from ChaCha stream `(seed, r)`, so a replica's path never depends on how
//! many other replicas run or in which order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::datagen::path_rng;
use crate::nets::{FlatParams, MlpSpec, NetError};

/// Any coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("replica {replica} diverged at step {step}")]
    Divergence { replica: usize, step: usize },
    #[error("Euler-Maruyama step produced a non-finite value")]
    NonFinite,
    #[error("invalid sampler configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// A drift field `w -> f(w)`.
pub trait Drift: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, w: &[f64]) -> Vec<f64>;
}

/// Two-stage diffusion scale: `gamma0` for the first `anneal_fraction` of the
/// steps, then 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaSchedule {
    pub gamma0: f64,
    pub anneal_fraction: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self {
            gamma0: 1.0,
            anneal_fraction: 0.2,
        }
    }
}

impl GammaSchedule {
    pub fn constant() -> Self {
        Self::default()
    }

    fn anneal_steps(&self, n_steps: usize) -> usize {
        if self.gamma0 == 1.0 {
            0
        } else {
            (self.anneal_fraction * n_steps as f64).round() as usize
        }
    }

    pub fn gamma(&self, step: usize, n_steps: usize) -> f64 {
        if step < self.anneal_steps(n_steps) {
            self.gamma0
        } else {
            1.0
        }
    }

    /// Whether prior and posterior share the diffusion scale at `step`.
    pub fn is_shared(&self, step: usize, n_steps: usize) -> bool {
        step >= self.anneal_steps(n_steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub dtau: f64,
    pub n_steps: usize,
    pub n_replicas: usize,
    pub schedule: GammaSchedule,
    pub eps_init: f64,
    #[serde(with = "seed_bits")]
    pub seed: u64,
}

// TOML integers are signed 64-bit; derived seeds use the full u64 range.
mod seed_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(*seed as i64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        i64::deserialize(d).map(|v| v as u64)
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            dtau: 1e-3,
            n_steps: 10_000,
            n_replicas: 50,
            schedule: GammaSchedule::default(),
            eps_init: 1e-5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::Invalid(m.into()));
        if !(self.dtau > 0.0) || !self.dtau.is_finite() {
            return bad("dtau must be positive");
        }
        if self.n_replicas < 2 {
            return bad("need at least two replicas");
        }
        if !(self.schedule.gamma0 >= 1.0) || !self.schedule.gamma0.is_finite() {
            return bad("gamma0 must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.schedule.anneal_fraction) {
            return bad("anneal_fraction must lie in [0, 1]");
        }
        if !(self.eps_init >= 0.0) {
            return bad("eps_init must be non-negative");
        }
        Ok(())
    }

    pub fn tau_final(&self) -> f64 {
        self.dtau * self.n_steps as f64
    }
}

/// Ornstein–Uhlenbeck prior `f0(w) = -(w - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub center: Vec<f64>,
    pub gamma0: f64,
}

pub fn prior_drift(w: &[f64], prior: &PriorSpec) -> Vec<f64> {
    w.iter().zip(&prior.center).map(|(w, c)| c - w).collect()
}

impl Drift for PriorSpec {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn drift(&self, w: &[f64]) -> Vec<f64> {
        prior_drift(w, self)
    }
}

/// Learned drift `NN_f(w - center; θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    pub spec: MlpSpec,
    pub theta: FlatParams,
    pub center: Vec<f64>,
}

impl ScoreNet {
    pub fn new(spec: MlpSpec, theta: FlatParams, center: Vec<f64>) -> Result<Self, SamplerError> {
        spec.validate()?;
        if spec.input_dim() != spec.output_dim() || spec.input_dim() != center.len() {
            return Err(SamplerError::Invalid(format!(
                "score network must map {0} inputs to {0} outputs",
                center.len()
            )));
        }
        if theta.len() != spec.n_params() {
            return Err(NetError::Size {
                what: "score parameters",
                expected: spec.n_params(),
                got: theta.len(),
            }
            .into());
        }
        Ok(Self { spec, theta, center })
    }

    /// Drift on a tape with θ as a variable and `w` any tape value.
    pub fn drift_tape(&self, tape: &mut Tape, theta: Var, center: Var, w: Var) -> Var {
        let x = tape.sub(w, center);
        self.spec.forward_tape(tape, theta, x).expect("validated score net")
    }
}

impl Drift for ScoreNet {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn drift(&self, w: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = w.iter().zip(&self.center).map(|(w, c)| w - c).collect();
        self.spec.forward_unchecked(self.theta.as_slice(), &x)
    }
}

/// `w + drift Δτ + γ √2 ΔB`.
pub fn em_step(w: &[f64], drift: &[f64], dtau: f64, gamma: f64, db: &[f64]) -> Result<Vec<f64>, SamplerError> {
    let c = gamma * std::f64::consts::SQRT_2;
    let out: Vec<f64> = w
        .iter()
        .zip(drift.iter().zip(db))
        .map(|(w, (f, b))| w + f * dtau + c * b)
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SamplerError::NonFinite);
    }
    Ok(out)
}

/// Noise source of one replica: the initial perturbation first, then one
/// `N(0, Δτ I)` increment per step.
pub struct ReplicaNoise {
    rng: ChaCha8Rng,
    sqrt_dtau: f64,
}

impl ReplicaNoise {
    pub fn new(cfg: &SamplerConfig, replica: usize) -> Self {
        Self {
            rng: path_rng(cfg.seed, replica as u64),
            sqrt_dtau: cfg.dtau.sqrt(),
        }
    }

    /// `w_init + eps_init * N(0, I)`.
    pub fn initial(&mut self, w_init: &[f64], eps_init: f64) -> Vec<f64> {
        w_init
            .iter()
            .map(|c| {
                let z: f64 = self.rng.sample(StandardNormal);
                c + eps_init * z
            })
            .collect()
    }

    pub fn increment(&mut self, dim: usize) -> Vec<f64> {
        (0..dim)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                self.sqrt_dtau * z
            })
            .collect()
    }
}

pub(crate) fn diverged(w: &[f64]) -> bool {
    w.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT))
}

/// Endpoints at `τ_f`, plus full paths (`n_steps + 1` states each) when
/// requested.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaSet {
    pub endpoints: Vec<Vec<f64>>,
    pub paths: Option<Vec<Vec<Vec<f64>>>>,
}

fn run_replica(
    drift: &dyn Drift,
    cfg: &SamplerConfig,
    w_init: &[f64],
    replica: usize,
    record: bool,
) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>), SamplerError> {
    let mut noise = ReplicaNoise::new(cfg, replica);
    let mut w = noise.initial(w_init, cfg.eps_init);
    let mut path = record.then(|| {
        let mut p = Vec::with_capacity(cfg.n_steps + 1);
        p.push(w.clone());
        p
    });
    let c = std::f64::consts::SQRT_2;
    for step in 0..cfg.n_steps {
        let gamma = cfg.schedule.gamma(step, cfg.n_steps);
        let f = drift.drift(&w);
        let db = noise.increment(w.len());
        for i in 0..w.len() {
            w[i] += f[i] * cfg.dtau + gamma * c * db[i];
        }
        if diverged(&w) {
            return Err(SamplerError::Divergence { replica, step });
        }
        if let Some(p) = path.as_mut() {
            p.push(w.clone());
        }
    }
    Ok((w, path))
}

pub fn simulate_replicas(
    drift: &dyn Drift,
    cfg: &SamplerConfig,
    w_init: &[f64],
    record_paths: bool,
) -> Result<ReplicaSet, SamplerError> {
    cfg.validate()?;
    if w_init.len() != drift.dim() {
        return Err(SamplerError::Invalid(format!(
            "initial point has {} coordinates, drift expects {}",
            w_init.len(),
            drift.dim()
        )));
    }
    let runs: Vec<_> = (0..cfg.n_replicas)
        .into_par_iter()
        .map(|r| run_replica(drift, cfg, w_init, r, record_paths))
        .collect::<Result<_, _>>()?;
    let mut endpoints = Vec::with_capacity(runs.len());
    let mut paths = record_paths.then(Vec::new);
    for (end, path) in runs {
        endpoints.push(end);
        if let (Some(all), Some(p)) = (paths.as_mut(), path) {
            all.push(p);
        }
    }
    Ok(ReplicaSet { endpoints, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Activation;

    #[test]
    fn large_seeds_survive_toml() {
        let cfg = SamplerConfig {
            seed: u64::MAX - 3,
            ..SamplerConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: SamplerConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    struct StdNormal(usize);

    impl Drift for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn drift(&self, w: &[f64]) -> Vec<f64> {
            w.iter().map(|v| -v).collect()
        }
    }

    struct Zero(usize);

    impl Drift for Zero {
        fn dim(&self) -> usize {
            self.0
        }
        fn drift(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0; self.0]
        }
    }

    fn moments(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len();
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, var, n)
    }

    #[test]
    fn prior_drift_examples() {
        let p = PriorSpec {
            center: vec![0.0, 0.0],
            gamma0: 1.0,
        };
        assert_eq!(prior_drift(&[2.0, -1.0], &p), vec![-2.0, 1.0]);
        let p = PriorSpec {
            center: vec![0.3],
            gamma0: 1.0,
        };
        assert_eq!(prior_drift(&[0.3], &p), vec![0.0]);
    }

    #[test]
    fn em_step_examples() {
        assert_eq!(em_step(&[0.0], &[1.0], 0.01, 1.0, &[0.0]).unwrap(), vec![0.01]);
        let a = em_step(&[1.0, 2.0], &[0.5, -0.5], 0.1, 2.0, &[0.3, -0.2]).unwrap();
        let lin = |w: f64, f: f64, b: f64| w + 0.1 * f + 2.0 * std::f64::consts::SQRT_2 * b;
        assert_eq!(a, vec![lin(1.0, 0.5, 0.3), lin(2.0, -0.5, -0.2)]);
    }

    #[test]
    fn schedule_is_two_stage() {
        let s = GammaSchedule {
            gamma0: 2.0,
            anneal_fraction: 0.2,
        };
        let g: Vec<f64> = (0..10).map(|i| s.gamma(i, 10)).collect();
        assert_eq!(g, vec![2.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(!s.is_shared(1, 10) && s.is_shared(2, 10));
        assert!(GammaSchedule::constant().is_shared(0, 10));
    }

    #[test]
    fn zero_steps_give_perturbed_initial_points() {
        let cfg = SamplerConfig {
            n_steps: 0,
            n_replicas: 4,
            seed: 9,
            ..SamplerConfig::default()
        };
        let set = simulate_replicas(&Zero(2), &cfg, &[1.0, -1.0], false).unwrap();
        for (r, end) in set.endpoints.iter().enumerate() {
            let mut n = ReplicaNoise::new(&cfg, r);
            assert_eq!(end, &n.initial(&[1.0, -1.0], 1e-5));
            assert!((end[0] - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn replicas_do_not_depend_on_count() {
        let mut cfg = SamplerConfig {
            n_steps: 50,
            n_replicas: 3,
            seed: 1,
            ..SamplerConfig::default()
        };
        let a = simulate_replicas(&StdNormal(2), &cfg, &[0.0, 0.0], true).unwrap();
        cfg.n_replicas = 5;
        let b = simulate_replicas(&StdNormal(2), &cfg, &[0.0, 0.0], false).unwrap();
        assert_eq!(a.endpoints[..], b.endpoints[..3]);
        assert_eq!(a.paths.unwrap()[2].last().unwrap(), &a.endpoints[2]);
    }

    #[test]
    fn standard_normal_stationary_law() {
        let cfg = SamplerConfig {
            dtau: 1e-2,
            n_steps: 800,
            n_replicas: 4000,
            seed: 21,
            ..SamplerConfig::default()
        };
        let set = simulate_replicas(&StdNormal(1), &cfg, &[0.0], false).unwrap();
        let (m, v, n) = moments(set.endpoints.iter().map(|w| w[0]));
        assert!(m.abs() < 3.0 / (n as f64).sqrt(), "mean {m}");
        assert!((v - 1.0).abs() < 0.1, "var {v}");
    }

    #[test]
    fn pure_diffusion_variance_law() {
        let cfg = SamplerConfig {
            dtau: 1e-2,
            n_steps: 100,
            n_replicas: 10_000,
            seed: 2,
            eps_init: 0.0,
            schedule: GammaSchedule {
                gamma0: 1.5,
                anneal_fraction: 1.0,
            },
        };
        let set = simulate_replicas(&Zero(1), &cfg, &[0.0], false).unwrap();
        let (_, v, _) = moments(set.endpoints.iter().map(|w| w[0]));
        let expected = 2.0 * 1.5f64.powi(2) * cfg.tau_final();
        assert!((v / expected - 1.0).abs() < 0.1, "var {v} vs {expected}");
    }

    #[test]
    fn divergence_is_reported() {
        struct Blowup;
        impl Drift for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn drift(&self, w: &[f64]) -> Vec<f64> {
                vec![1e3 * (w[0] + 1.0)]
            }
        }
        let cfg = SamplerConfig {
            dtau: 0.1,
            n_steps: 100,
            n_replicas: 2,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            simulate_replicas(&Blowup, &cfg, &[0.0], false),
            Err(SamplerError::Divergence { replica: 0, .. })
        ));
    }

    #[test]
    fn score_net_tape_matches_plain() {
        let spec = MlpSpec::with_hidden(2, &[2, 2], 2, Activation::Tanh).unwrap();
        let theta = FlatParams::new((0..spec.n_params()).map(|i| (i as f64 * 0.37).sin()).collect());
        let net = ScoreNet::new(spec, theta.clone(), vec![-8.0, 8.0]).unwrap();
        let w = [-7.5, 8.2];
        let mut tape = Tape::new();
        let t = tape.leaf(theta.as_slice());
        let c = tape.constant(&net.center);
        let wv = tape.constant(&w);
        let out = net.drift_tape(&mut tape, t, c, wv);
        assert_eq!(tape.value(out), net.drift(&w).as_slice());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamplerConfig::default();
        cfg.n_replicas = 1;
        assert!(cfg.validate().is_err());
        cfg.n_replicas = 2;
        cfg.schedule.gamma0 = 0.5;
        assert!(cfg.validate().is_err());
    }
}
