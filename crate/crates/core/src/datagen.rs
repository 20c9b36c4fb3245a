//! Synthetic data: analytic OU trajectories with per-path parameter
//! variability, Gillespie SSA paths of the Schlögl network, and a noisy
//! regression toy.
//!
//! Every generator draws path `j` from its own ChaCha stream `(seed, j)`, so
//! output is independent of thread scheduling and bit-identical across runs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{TrajectoryEnsemble, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> DataError {
    DataError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// RNG stream for path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform grid `start..=end` with `points` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub points: usize,
}

impl TimeGrid {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.points < 2 {
            return Err(invalid("grid.points", "need at least two grid points"));
        }
        if !(self.end > self.start) || !self.start.is_finite() || !self.end.is_finite() {
            return Err(invalid("grid", "end must exceed start"));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.points - 1;
        (0..self.points)
            .map(|k| self.start + (self.end - self.start) * k as f64 / n as f64)
            .collect()
    }
}

/// Mean and standard deviation of a normal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub std: f64,
}

impl NormalParams {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + self.std * z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuDataConfig {
    /// Decay rate distribution.
    pub rate: NormalParams,
    /// Long-time level distribution.
    pub level: NormalParams,
    pub initial: NormalParams,
    /// Diffusion of the generating SDE; zero gives the closed-form paths.
    pub noise_std: f64,
    pub grid: TimeGrid,
    pub n_traj: usize,
}

impl Default for OuDataConfig {
    fn default() -> Self {
        Self {
            rate: NormalParams { mean: 8.0, std: 0.8 },
            level: NormalParams { mean: 1.0, std: 0.1 },
            initial: NormalParams { mean: 2.0, std: 0.02 },
            noise_std: 0.0,
            grid: TimeGrid {
                start: 0.0,
                end: 1.0,
                points: 101,
            },
            n_traj: 1024,
        }
    }
}

impl OuDataConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        for (field, p) in [
            ("rate.std", self.rate),
            ("level.std", self.level),
            ("initial.std", self.initial),
        ] {
            if !(p.std >= 0.0) {
                return Err(invalid(field, "standard deviation must be non-negative"));
            }
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std", "must be non-negative"));
        }
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be positive"));
        }
        self.grid.validate()
    }
}

/// Closed-form solution of `dy = -rate (y - level) dt`.
pub fn ou_solution(rate: f64, level: f64, y0: f64, t: f64) -> f64 {
    (y0 - level) * (-rate * t).exp() + level
}

pub fn generate_ou_dataset(cfg: &OuDataConfig, seed: u64) -> Result<TrajectoryEnsemble, DataError> {
    cfg.validate()?;
    let times = cfg.grid.times();
    let paths: Vec<Vec<f64>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            let rate = cfg.rate.sample(&mut rng);
            let level = cfg.level.sample(&mut rng);
            let y0 = cfg.initial.sample(&mut rng);
            if cfg.noise_std == 0.0 {
                times.iter().map(|&t| ou_solution(rate, level, y0, t - times[0])).collect()
            } else {
                // exact OU transition between grid nodes
                let mut y = y0;
                let mut out = Vec::with_capacity(times.len());
                out.push(y);
                for w in times.windows(2) {
                    let dt = w[1] - w[0];
                    let decay = (-rate * dt).exp();
                    let var = if rate.abs() > 1e-12 {
                        cfg.noise_std.powi(2) * (1.0 - decay * decay) / (2.0 * rate)
                    } else {
                        cfg.noise_std.powi(2) * dt
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    y = level + (y - level) * decay + var.max(0.0).sqrt() * z;
                    out.push(y);
                }
                out
            }
        })
        .collect();
    Ok(TrajectoryEnsemble::from_paths(times, paths)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchloglConfig {
    /// `k1..k4` for `A + 2X <-> 3X` and `B <-> X`.
    pub rates: [f64; 4],
    pub a: u64,
    pub b: u64,
    pub x0: u64,
    pub grid: TimeGrid,
    pub n_traj: usize,
}

impl Default for SchloglConfig {
    fn default() -> Self {
        Self {
            rates: [3e-7, 1e-4, 1e-3, 3.5],
            a: 100_000,
            b: 200_000,
            x0: 250,
            grid: TimeGrid {
                start: 0.0,
                end: 5.0,
                points: 100,
            },
            n_traj: 256,
        }
    }
}

impl SchloglConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.rates.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(invalid("rates", "rate constants must be finite and non-negative"));
        }
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be positive"));
        }
        self.grid.validate()
    }
}

/// Propensities `(a1_fwd, a1_rev, a2_fwd, a2_rev)` at count `x`.
pub fn schlogl_propensities(x: u64, cfg: &SchloglConfig) -> [f64; 4] {
    let [k1, k2, k3, k4] = cfg.rates;
    let xf = x as f64;
    let pairs = if x >= 2 { xf * (xf - 1.0) } else { 0.0 };
    let triples = if x >= 3 { xf * (xf - 1.0) * (xf - 2.0) } else { 0.0 };
    [
        k1 * cfg.a as f64 * pairs / 2.0,
        k2 * triples / 6.0,
        k3 * cfg.b as f64,
        k4 * xf,
    ]
}

const SCHLOGL_CHANGE: [i64; 4] = [1, -1, 1, -1];

/// Event history of one SSA path: `states[i]` holds from `times[i]` until the
/// next event. `times[0]` is the start time.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaPath {
    pub times: Vec<f64>,
    pub states: Vec<u64>,
}

/// Gillespie direct method up to `t_end`.
pub fn simulate_schlogl<R: Rng + ?Sized>(cfg: &SchloglConfig, rng: &mut R, t_end: f64) -> SsaPath {
    let mut t = cfg.grid.start;
    let mut x = cfg.x0;
    let mut path = SsaPath {
        times: vec![t],
        states: vec![x],
    };
    loop {
        let a = schlogl_propensities(x, cfg);
        let total: f64 = a.iter().sum();
        if total <= 0.0 {
            break;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln() / total;
        if t > t_end {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut r = 3;
        for (i, ai) in a.iter().enumerate() {
            if target < *ai {
                r = i;
                break;
            }
            target -= ai;
        }
        // a zero-propensity channel can never be chosen
        while a[r] == 0.0 {
            r -= 1;
        }
        x = x.checked_add_signed(SCHLOGL_CHANGE[r]).expect("count stays non-negative");
        path.times.push(t);
        path.states.push(x);
    }
    path
}

impl SsaPath {
    /// State at each grid time: the state after the latest event `<= t`.
    pub fn sample(&self, grid: &[f64]) -> Vec<f64> {
        let mut i = 0;
        grid.iter()
            .map(|&t| {
                while i + 1 < self.times.len() && self.times[i + 1] <= t {
                    i += 1;
                }
                self.states[i] as f64
            })
            .collect()
    }
}

pub fn generate_schlogl_dataset(cfg: &SchloglConfig, seed: u64) -> Result<TrajectoryEnsemble, DataError> {
    cfg.validate()?;
    let times = cfg.grid.times();
    let t_end = *times.last().expect("validated grid");
    let paths: Vec<Vec<f64>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|j| simulate_schlogl(cfg, &mut path_rng(seed, j as u64), t_end).sample(&times))
        .collect();
    Ok(TrajectoryEnsemble::from_paths(times, paths)?)
}

/// Noisy static regression `y = sin(2x) + x/2 + noise` observed on a shared
/// input grid; every path is an independent noise draw over the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub grid: TimeGrid,
    pub noise_std: f64,
    pub n_traj: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            grid: TimeGrid {
                start: -2.0,
                end: 2.0,
                points: 41,
            },
            noise_std: 0.1,
            n_traj: 64,
        }
    }
}

pub fn regression_truth(x: f64) -> f64 {
    (2.0 * x).sin() + 0.5 * x
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(invalid("noise_std", "must be non-negative"));
        }
        self.grid.validate()
    }
}

pub fn generate_regression_dataset(cfg: &RegressionConfig, seed: u64) -> Result<TrajectoryEnsemble, DataError> {
    cfg.validate()?;
    let xs = cfg.grid.times();
    let paths: Vec<Vec<f64>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|j| {
            let mut rng = path_rng(seed, j as u64);
            xs.iter()
                .map(|&x| {
                    let z: f64 = rng.sample(StandardNormal);
                    regression_truth(x) + cfg.noise_std * z
                })
                .collect()
        })
        .collect();
    let inputs = xs.iter().map(|&x| vec![x]).collect();
    Ok(TrajectoryEnsemble::from_paths(xs, paths)?.with_inputs(inputs)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_closed_form_values() {
        assert_eq!(ou_solution(8.0, 1.0, 2.0, 0.0), 2.0);
        for t in [0.0, 0.3, 5.0] {
            assert_eq!(ou_solution(8.0, 1.5, 1.5, t), 1.5);
        }
        // 1 + e^{-0.8}, evaluated independently
        assert!((ou_solution(8.0, 1.0, 2.0, 0.1) - 1.4493289641172216).abs() < 1e-12);
    }

    #[test]
    fn zero_spread_gives_identical_paths() {
        let mut cfg = OuDataConfig::default();
        cfg.rate.std = 0.0;
        cfg.level.std = 0.0;
        cfg.initial.std = 0.0;
        cfg.n_traj = 8;
        let e = generate_ou_dataset(&cfg, 3).unwrap();
        for j in 1..8 {
            assert_eq!(e.path(j), e.path(0));
        }
    }

    #[test]
    fn ou_ensemble_moments_within_clt_band() {
        let e = generate_ou_dataset(&OuDataConfig::default(), 11).unwrap();
        let last = e.n_times() - 1;
        assert!((e.mean_at(last, 0) - 1.0).abs() < 3.0 * 0.1 / 1024f64.sqrt());
        assert!((e.mean_at(0, 0) - 2.0).abs() < 3.0 * 0.02 / 1024f64.sqrt());
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let cfg = OuDataConfig {
            n_traj: 16,
            ..OuDataConfig::default()
        };
        assert_eq!(generate_ou_dataset(&cfg, 5).unwrap(), generate_ou_dataset(&cfg, 5).unwrap());
        let cfg = SchloglConfig {
            n_traj: 4,
            ..SchloglConfig::default()
        };
        assert_eq!(
            generate_schlogl_dataset(&cfg, 5).unwrap(),
            generate_schlogl_dataset(&cfg, 5).unwrap()
        );
    }

    #[test]
    fn propensity_values() {
        let cfg = SchloglConfig::default();
        assert_eq!(schlogl_propensities(0, &cfg), [0.0, 0.0, 1e-3 * 2e5, 0.0]);
        let a = schlogl_propensities(100, &cfg);
        assert!((a[0] - 148.5).abs() < 1e-9);
        assert!((a[1] - 16.17).abs() < 1e-9);
        assert!((a[3] - 350.0).abs() < 1e-9);
    }

    #[test]
    fn no_reactions_keep_initial_count() {
        let cfg = SchloglConfig {
            rates: [0.0; 4],
            n_traj: 3,
            ..SchloglConfig::default()
        };
        let e = generate_schlogl_dataset(&cfg, 1).unwrap();
        assert!(e.values().iter().all(|&v| v == 250.0));
    }

    #[test]
    fn grid_sampling_is_right_continuous() {
        let p = SsaPath {
            times: vec![0.0, 0.5, 1.5],
            states: vec![10, 11, 12],
        };
        assert_eq!(p.sample(&[0.0, 0.49, 0.5, 1.0, 1.5, 2.0]), vec![10.0, 10.0, 11.0, 11.0, 12.0, 12.0]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = OuDataConfig {
            n_traj: 0,
            ..OuDataConfig::default()
        };
        assert!(generate_ou_dataset(&cfg, 0).is_err());
        let mut cfg = OuDataConfig::default();
        cfg.rate.std = -1.0;
        assert!(cfg.validate().is_err());
    }
}
