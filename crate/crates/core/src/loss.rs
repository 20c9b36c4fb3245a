//! ELBO pieces: the Gaussian-mixture trajectory likelihood, σ estimation, and
//! the discretized path-space KL between posterior and prior samplers.
//!
//! Every data path `j` shares one model prediction `Ŷ_k` (the model sees the
//! same inputs and initial state for every path). Mode `l` predicts
//! `Ŷ_k + c_{k,a(j)} - c_{k,l}`, where `c_{k,l}` is the center of mode `l` at
//! time `k` and `a(j)` the mode path `j` was assigned to. With one mode this is
//! the plain Gaussian likelihood around `Ŷ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::metrics::{two_means, MetricError};
use crate::trajectory::TrajectoryEnsemble;

const LN_2PI: f64 = 1.8378770664093453;

/// Relative σ floor, in units of the data range.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("need at least two trajectories{0}")]
    TooFewTrajectories(&'static str),
    #[error("sigma must be positive (time {time}, mode {mode})")]
    NonPositiveSigma { time: usize, mode: usize },
    #[error("mode weights must be positive and sum to one")]
    Weights,
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("only one or two modes are supported, got {0}")]
    Modes(usize),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Per-time standard deviations: data spread, MLE misfit, and their
/// quadrature sum. `data` and `combined` hold one row per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub data: Vec<Vec<f64>>,
    pub mle: Vec<f64>,
    pub combined: Vec<Vec<f64>>,
}

pub fn combine_sigma(data: f64, mle: f64) -> f64 {
    data.hypot(mle)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub weight: f64,
    /// Per (time, component), `n_times * dim`.
    pub sigma: Vec<f64>,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodSpec {
    pub modes: Vec<Mode>,
    /// Mode index of each data path.
    pub assignment: Vec<usize>,
}

fn unbiased_std(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Mode assignment of every path: all zero for one mode, 2-means on the
/// final-time value (first component) for two.
pub fn assign_modes(data: &TrajectoryEnsemble, n_modes: usize) -> Result<Vec<usize>, LossError> {
    match n_modes {
        1 => Ok(vec![0; data.n_traj()]),
        2 => {
            let last = data.slice(data.n_times() - 1, 0);
            Ok(two_means(&last)?.assignment)
        }
        n => Err(LossError::Modes(n)),
    }
}

/// σ per mode and time. `mle_pred` is the MLE model output, `n_times * dim`.
pub fn estimate_sigma(
    data: &TrajectoryEnsemble,
    mle_pred: &[f64],
    assignment: &[usize],
    n_modes: usize,
) -> Result<SigmaEstimate, LossError> {
    let row = data.n_times() * data.dim();
    if mle_pred.len() != row {
        return Err(LossError::Shape {
            what: "MLE prediction",
            expected: row,
            got: mle_pred.len(),
        });
    }
    if data.n_traj() < 2 {
        return Err(LossError::TooFewTrajectories(""));
    }
    let mle: Vec<f64> = (0..row)
        .map(|i| {
            let mean = (0..data.n_traj()).map(|j| data.path(j)[i]).sum::<f64>() / data.n_traj() as f64;
            (mean - mle_pred[i]).abs()
        })
        .collect();
    let floor = SIGMA_FLOOR * data.range().max(f64::MIN_POSITIVE);
    let mut per_mode = Vec::with_capacity(n_modes);
    let mut combined = Vec::with_capacity(n_modes);
    for l in 0..n_modes {
        let members: Vec<usize> = (0..data.n_traj()).filter(|&j| assignment[j] == l).collect();
        if members.len() < 2 {
            return Err(LossError::TooFewTrajectories(" in every mode"));
        }
        let sd: Vec<f64> = (0..row)
            .map(|i| unbiased_std(members.iter().map(|&j| data.path(j)[i])))
            .collect();
        combined.push(sd.iter().zip(&mle).map(|(d, m)| combine_sigma(*d, *m).max(floor)).collect());
        per_mode.push(sd);
    }
    Ok(SigmaEstimate {
        data: per_mode,
        mle,
        combined,
    })
}

impl LikelihoodSpec {
    /// Mode weights by path counts, centers by mode means, σ from
    /// [`estimate_sigma`].
    pub fn from_data(data: &TrajectoryEnsemble, mle_pred: &[f64], n_modes: usize) -> Result<(Self, SigmaEstimate), LossError> {
        let assignment = assign_modes(data, n_modes)?;
        let sigma = estimate_sigma(data, mle_pred, &assignment, n_modes)?;
        let row = data.n_times() * data.dim();
        let modes = (0..n_modes)
            .map(|l| {
                let members: Vec<usize> = (0..data.n_traj()).filter(|&j| assignment[j] == l).collect();
                let center = (0..row)
                    .map(|i| members.iter().map(|&j| data.path(j)[i]).sum::<f64>() / members.len() as f64)
                    .collect();
                Mode {
                    weight: members.len() as f64 / data.n_traj() as f64,
                    sigma: sigma.combined[l].clone(),
                    center,
                }
            })
            .collect();
        Ok((Self { modes, assignment }, sigma))
    }

    /// One mode with the given σ per (time, component).
    pub fn single(sigma: Vec<f64>, n_traj: usize) -> Self {
        Self {
            modes: vec![Mode {
                weight: 1.0,
                center: vec![0.0; sigma.len()],
                sigma,
            }],
            assignment: vec![0; n_traj],
        }
    }

    pub fn validate(&self, data: &TrajectoryEnsemble) -> Result<(), LossError> {
        let row = data.n_times() * data.dim();
        if self.modes.is_empty() || self.modes.len() > 2 {
            return Err(LossError::Modes(self.modes.len()));
        }
        let total: f64 = self.modes.iter().map(|m| m.weight).sum();
        if self.modes.iter().any(|m| !(m.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(LossError::Weights);
        }
        for (l, m) in self.modes.iter().enumerate() {
            for (what, v) in [("mode sigma", &m.sigma), ("mode center", &m.center)] {
                if v.len() != row {
                    return Err(LossError::Shape {
                        what,
                        expected: row,
                        got: v.len(),
                    });
                }
            }
            if let Some(i) = m.sigma.iter().position(|s| !(*s > 0.0)) {
                return Err(LossError::NonPositiveSigma { time: i / data.dim(), mode: l });
            }
        }
        if self.assignment.len() != data.n_traj() || self.assignment.iter().any(|&a| a >= self.modes.len()) {
            return Err(LossError::Shape {
                what: "mode assignment",
                expected: data.n_traj(),
                got: self.assignment.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `Σ_j Σ_k log Σ_l α_l N(Y_jk; Ŷ_k + c_{k,a(j)} - c_{k,l}, σ_{k,l}²)`,
/// evaluated point by point.
pub fn log_likelihood(data: &TrajectoryEnsemble, pred: &[f64], lik: &LikelihoodSpec) -> Result<f64, LossError> {
    lik.validate(data)?;
    let row = data.n_times() * data.dim();
    if pred.len() != row {
        return Err(LossError::Shape {
            what: "prediction",
            expected: row,
            got: pred.len(),
        });
    }
    let mut total = 0.0;
    let mut terms = vec![0.0; lik.modes.len()];
    for j in 0..data.n_traj() {
        let home = &lik.modes[lik.assignment[j]].center;
        for (i, &y) in data.path(j).iter().enumerate() {
            for (l, m) in lik.modes.iter().enumerate() {
                let mu = pred[i] + home[i] - m.center[i];
                let s = m.sigma[i];
                terms[l] = m.weight.ln() - 0.5 * LN_2PI - s.ln() - 0.5 * ((y - mu) / s).powi(2);
            }
            total += log_sum_exp(&terms);
        }
    }
    Ok(total)
}

/// A likelihood bound to one dataset, precomputed for repeated evaluation.
///
/// One mode uses per-time sufficient statistics,
/// `Σ_j (Y_jk - Ŷ_k)² = S_k + N (Ȳ_k - Ŷ_k)²`; two modes evaluate every point.
#[derive(Debug, Clone)]
pub struct PreparedLikelihood {
    row: usize,
    kind: Prepared,
}

#[derive(Debug, Clone)]
enum Prepared {
    Single {
        constant: f64,
        mean: Vec<f64>,
        /// `N / (2σ²)` per entry.
        weight: Vec<f64>,
    },
    Mixture {
        /// Per mode, `Y_jk - c_{k,a(j)} + c_{k,l}` laid out path-major.
        targets: Vec<Vec<f64>>,
        /// Per mode, `-1/(2σ²)` tiled over paths.
        inv: Vec<Vec<f64>>,
        /// Per mode, `ln α - ln(2π)/2 - ln σ` tiled over paths.
        offset: Vec<Vec<f64>>,
        index: Vec<usize>,
    },
}

impl PreparedLikelihood {
    pub fn new(data: &TrajectoryEnsemble, lik: &LikelihoodSpec) -> Result<Self, LossError> {
        lik.validate(data)?;
        let row = data.n_times() * data.dim();
        let n = data.n_traj();
        let kind = if lik.modes.len() == 1 {
            let sigma = &lik.modes[0].sigma;
            let mean: Vec<f64> = (0..row)
                .map(|i| (0..n).map(|j| data.path(j)[i]).sum::<f64>() / n as f64)
                .collect();
            let mut constant = 0.0;
            for i in 0..row {
                let ss: f64 = (0..n).map(|j| (data.path(j)[i] - mean[i]).powi(2)).sum();
                let s2 = sigma[i] * sigma[i];
                constant += -(n as f64) * (0.5 * LN_2PI + sigma[i].ln()) - ss / (2.0 * s2);
            }
            Prepared::Single {
                constant,
                weight: sigma.iter().map(|s| n as f64 / (2.0 * s * s)).collect(),
                mean,
            }
        } else {
            let mut targets = Vec::new();
            let mut inv = Vec::new();
            let mut offset = Vec::new();
            for m in &lik.modes {
                let mut t = Vec::with_capacity(n * row);
                let mut a = Vec::with_capacity(n * row);
                let mut o = Vec::with_capacity(n * row);
                for j in 0..n {
                    let home = &lik.modes[lik.assignment[j]].center;
                    for (i, &y) in data.path(j).iter().enumerate() {
                        t.push(y - home[i] + m.center[i]);
                        a.push(-0.5 / (m.sigma[i] * m.sigma[i]));
                        o.push(m.weight.ln() - 0.5 * LN_2PI - m.sigma[i].ln());
                    }
                }
                targets.push(t);
                inv.push(a);
                offset.push(o);
            }
            Prepared::Mixture {
                targets,
                inv,
                offset,
                index: (0..n * row).map(|p| p % row).collect(),
            }
        };
        Ok(Self { row, kind })
    }

    pub fn pred_len(&self) -> usize {
        self.row
    }

    pub fn eval(&self, pred: &[f64]) -> f64 {
        assert_eq!(pred.len(), self.row, "prediction length");
        match &self.kind {
            Prepared::Single { constant, mean, weight } => {
                constant
                    - mean
                        .iter()
                        .zip(pred)
                        .zip(weight)
                        .map(|((m, p), w)| w * (m - p).powi(2))
                        .sum::<f64>()
            }
            Prepared::Mixture {
                targets,
                inv,
                offset,
                index,
            } => {
                let mut terms = vec![0.0; targets.len()];
                (0..index.len())
                    .map(|p| {
                        for l in 0..targets.len() {
                            terms[l] = offset[l][p] + inv[l][p] * (targets[l][p] - pred[index[p]]).powi(2);
                        }
                        log_sum_exp(&terms)
                    })
                    .sum()
            }
        }
    }

    /// Log-likelihood recorded on a tape, differentiable in `pred`.
    pub fn eval_tape(&self, tape: &mut Tape, pred: Var) -> Var {
        assert_eq!(pred.len(), self.row, "prediction length");
        match &self.kind {
            Prepared::Single { constant, mean, weight } => {
                let m = tape.constant(mean);
                let r = tape.sub(m, pred);
                let r2 = tape.square(r);
                let w = tape.constant(weight);
                let q = tape.mul(r2, w);
                let s = tape.sum(q);
                let s = tape.scale(s, -1.0);
                let c = tape.scalar_const(*constant);
                tape.add(s, c)
            }
            Prepared::Mixture {
                targets,
                inv,
                offset,
                index,
            } => {
                let g = tape.gather(pred, index);
                let mut logs = Vec::with_capacity(targets.len());
                for l in 0..targets.len() {
                    let t = tape.constant(&targets[l]);
                    let r = tape.sub(t, g);
                    let r2 = tape.square(r);
                    let a = tape.constant(&inv[l]);
                    let q = tape.mul(r2, a);
                    let o = tape.constant(&offset[l]);
                    logs.push(tape.add(q, o));
                }
                // log-sum-exp with a shift held constant; the identity holds
                // for any shift, so the gradient is exact
                let shift: Vec<f64> = (0..index.len())
                    .map(|p| logs.iter().map(|&v| tape.value(v)[p]).fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                let c = tape.constant(&shift);
                let mut acc = None;
                for v in logs {
                    let d = tape.sub(v, c);
                    let e = tape.exp(d);
                    acc = Some(match acc {
                        None => e,
                        Some(a) => tape.add(a, e),
                    });
                }
                let lse = tape.log(acc.expect("at least one mode"));
                let lse = tape.add(lse, c);
                tape.sum(lse)
            }
        }
    }
}

/// `(1/N_R) Σ_r Σ_steps ½ ‖(f* - f0)/γ‖² Δτ`. Each replica entry lists the
/// drift pairs at the left endpoint of every shared-γ step, flattened.
pub fn path_kl(posterior: &[Vec<f64>], prior: &[Vec<f64>], gamma: f64, dtau: f64) -> f64 {
    assert_eq!(posterior.len(), prior.len(), "replica count");
    let n = posterior.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = posterior
        .iter()
        .zip(prior)
        .map(|(fs, f0)| {
            assert_eq!(fs.len(), f0.len(), "drift length");
            fs.iter().zip(f0).map(|(a, b)| ((a - b) / gamma).powi(2)).sum::<f64>()
        })
        .sum();
    0.5 * total * dtau / n as f64
}

/// One step's `½ ‖(f* - f0)/γ‖² Δτ` on a tape.
pub fn path_kl_step_tape(tape: &mut Tape, f_star: Var, f_prior: Var, gamma: f64, dtau: f64) -> Var {
    let d = tape.sub(f_star, f_prior);
    let q = tape.square(d);
    let s = tape.sum(q);
    tape.scale(s, 0.5 * dtau / (gamma * gamma))
}

/// Mean replica log-likelihood minus the KL penalty. Summation runs over the
/// sorted values so the result does not depend on replica order.
pub fn elbo(logliks: &[f64], kl: f64) -> f64 {
    assert!(!logliks.is_empty(), "need at least one replica");
    let mut v = logliks.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64 - kl
}

/// Closed-form `KL(N(m0, s0²) ‖ N(m1, s1²))`.
pub fn kl_normal(m0: f64, s0: f64, m1: f64, s1: f64) -> f64 {
    (s1 / s0).ln() + (s0 * s0 + (m0 - m1).powi(2)) / (2.0 * s1 * s1) - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ensemble(paths: Vec<Vec<f64>>) -> TrajectoryEnsemble {
        let n_t = paths[0].len();
        TrajectoryEnsemble::from_paths((0..n_t).map(|k| k as f64).collect(), paths).unwrap()
    }

    #[test]
    fn sigma_combination() {
        assert_eq!(combine_sigma(2.0, 0.0), 2.0);
        assert_eq!(combine_sigma(3.0, 4.0), 5.0);
    }

    #[test]
    fn sigma_estimate_from_data() {
        let d = ensemble(vec![vec![0.0, 1.0], vec![2.0, 1.0], vec![4.0, 1.0]]);
        let s = estimate_sigma(&d, &[2.0, 4.0], &[0, 0, 0], 1).unwrap();
        assert_eq!(s.data[0], vec![2.0, 0.0]);
        assert_eq!(s.mle, vec![0.0, 3.0]);
        assert_eq!(s.combined[0], vec![2.0, 3.0]);
        let one = ensemble(vec![vec![0.0, 1.0]]);
        assert!(estimate_sigma(&one, &[0.0, 0.0], &[0], 1).is_err());
    }

    #[test]
    fn degenerate_data_hits_the_floor() {
        let d = ensemble(vec![vec![1.0, 3.0]; 4]);
        let s = estimate_sigma(&d, &[1.0, 3.0], &[0; 4], 1).unwrap();
        assert_eq!(s.data[0], vec![0.0, 0.0]);
        assert_eq!(s.combined[0], vec![2e-6, 2e-6]);
    }

    #[test]
    fn normal_log_density_at_mode() {
        let d = ensemble(vec![vec![0.5]]);
        let lik = LikelihoodSpec::single(vec![1.0], 1);
        let v = log_likelihood(&d, &[0.5], &lik).unwrap();
        assert!((v + 0.918938533204672_7).abs() < 1e-15);
        let r = log_likelihood(&d, &[0.5 + 1.0], &lik).unwrap();
        assert!((r - (v - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn equal_modes_collapse_to_one() {
        let d = ensemble(vec![vec![0.1, 0.4], vec![0.3, -0.2], vec![1.0, 0.0]]);
        let one = LikelihoodSpec::single(vec![0.5, 0.7], 3);
        let mode = one.modes[0].clone();
        let two = LikelihoodSpec {
            modes: vec![
                Mode {
                    weight: 0.5,
                    ..mode.clone()
                },
                Mode { weight: 0.5, ..mode },
            ],
            assignment: vec![0, 1, 0],
        };
        let pred = [0.2, 0.1];
        let a = log_likelihood(&d, &pred, &one).unwrap();
        let b = log_likelihood(&d, &pred, &two).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn prepared_forms_match_reference() {
        let d = ensemble(vec![
            vec![0.1, 0.4, 2.0],
            vec![0.3, -0.2, 2.5],
            vec![1.0, 0.0, 6.0],
            vec![1.2, 0.3, 6.4],
            vec![0.7, 0.1, 5.9],
        ]);
        let pred = [0.5, 0.1, 4.0];
        for n_modes in [1, 2] {
            let (lik, _) = LikelihoodSpec::from_data(&d, &pred, n_modes).unwrap();
            let reference = log_likelihood(&d, &pred, &lik).unwrap();
            let prep = PreparedLikelihood::new(&d, &lik).unwrap();
            assert!((prep.eval(&pred) - reference).abs() < 1e-9 * reference.abs());
            let mut tape = Tape::new();
            let p = tape.leaf(&pred);
            let v = prep.eval_tape(&mut tape, p);
            assert!((tape.scalar(v) - reference).abs() < 1e-9 * reference.abs());
            let g = tape.backward(v).unwrap().wrt(p).to_vec();
            for i in 0..3 {
                let h = 1e-6;
                let mut up = pred;
                let mut dn = pred;
                up[i] += h;
                dn[i] -= h;
                let fd = (log_likelihood(&d, &up, &lik).unwrap() - log_likelihood(&d, &dn, &lik).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "{n_modes} {i}: {fd} {}", g[i]);
            }
        }
    }

    #[test]
    fn two_mode_assignment_by_final_value() {
        let d = ensemble(vec![vec![2.5, 1.0], vec![2.5, 1.2], vec![2.5, 5.0], vec![2.5, 5.4], vec![2.5, 0.9]]);
        let (lik, _) = LikelihoodSpec::from_data(&d, &[2.5, 2.5], 2).unwrap();
        assert_eq!(lik.assignment, vec![0, 0, 1, 1, 0]);
        assert!((lik.modes[0].weight - 0.6).abs() < 1e-15);
        assert!((lik.modes[1].center[1] - 5.2).abs() < 1e-12);
    }

    #[test]
    fn invalid_sigma_rejected() {
        let d = ensemble(vec![vec![0.0]]);
        let lik = LikelihoodSpec::single(vec![0.0], 1);
        assert_eq!(
            log_likelihood(&d, &[0.0], &lik),
            Err(LossError::NonPositiveSigma { time: 0, mode: 0 })
        );
    }

    #[test]
    fn path_kl_examples() {
        let f = vec![vec![0.3, -1.0, 2.0]; 3];
        assert_eq!(path_kl(&f, &f, 1.0, 0.01), 0.0);
        // unit gap over τ_f = 1 with 1000 steps
        let fs = vec![vec![1.0; 1000], vec![1.0; 1000]];
        let f0 = vec![vec![0.0; 1000], vec![0.0; 1000]];
        assert!((path_kl(&fs, &f0, 1.0, 1e-3) - 0.5).abs() < 1e-12);
        let scaled: Vec<Vec<f64>> = fs.iter().map(|v| v.iter().map(|x| 3.0 * x).collect()).collect();
        assert!((path_kl(&scaled, &f0, 1.0, 1e-3) - 4.5).abs() < 1e-11);
    }

    #[test]
    fn elbo_examples() {
        assert_eq!(elbo(&[-4.2], 0.0), -4.2);
        assert_eq!(elbo(&[-1.0, -3.0], 0.5), -2.5);
    }

    #[test]
    fn gaussian_kl_closed_form() {
        assert_eq!(kl_normal(0.0, 1.0, 1.0, 1.0), 0.5);
        assert_eq!(kl_normal(0.3, 2.0, 0.3, 2.0), 0.0);
    }

    proptest! {
        #[test]
        fn elbo_is_permutation_invariant(v in prop::collection::vec(-1e6f64..0.0, 1..30), kl in 0f64..10.0, seed in 0u64..1000) {
            let mut w = v.clone();
            let n = w.len();
            for i in 0..n {
                w.swap(i, (seed as usize * 31 + i * 17) % n);
            }
            prop_assert_eq!(elbo(&v, kl).to_bits(), elbo(&w, kl).to_bits());
        }

        #[test]
        fn path_kl_non_negative(a in prop::collection::vec(-5f64..5.0, 12), b in prop::collection::vec(-5f64..5.0, 12), g in 1f64..3.0) {
            let k = path_kl(&[a.clone()], &[b.clone()], g, 0.01);
            prop_assert!(k >= 0.0);
            prop_assert_eq!(k == 0.0, a == b);
        }

        #[test]
        fn single_mode_decreases_with_residual(r1 in 0f64..3.0, dr in 1e-3f64..3.0, s in 0.1f64..2.0) {
            let d = ensemble(vec![vec![0.0]]);
            let lik = LikelihoodSpec::single(vec![s], 1);
            let near = log_likelihood(&d, &[r1], &lik).unwrap();
            let far = log_likelihood(&d, &[-(r1 + dr)], &lik).unwrap();
            prop_assert!(far < near);
        }
    }
}
