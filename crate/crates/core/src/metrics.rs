//! Evaluation metrics and reference oracles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::Drift;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty sample")]
    Empty,
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("sample counts differ: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("score undefined at W = 0")]
    SingularJacobian,
}

/// Step CDF of an equally weighted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    values: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self, MetricError> {
        if samples.is_empty() {
            return Err(MetricError::Empty);
        }
        let mut values = samples.to_vec();
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.values
    }

    /// Fraction of samples `<= y`.
    pub fn eval(&self, y: f64) -> f64 {
        self.values.partition_point(|&v| v <= y) as f64 / self.values.len() as f64
    }
}

/// `∫ |F_a - F_b| dy`, integrated exactly between merged breakpoints.
pub fn w1_distance(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    let fa = EmpiricalCdf::new(a)?;
    let fb = EmpiricalCdf::new(b)?;
    let (xa, xb) = (fa.sorted(), fb.sorted());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = xa[0].min(xb[0]);
    let mut total = 0.0;
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < xa.len() && xa[i] == next {
            i += 1;
        }
        while j < xb.len() && xb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// W1 at every time index between two value tables laid out as
/// `[sample][time]`.
pub fn w1_per_time(pred: &[Vec<f64>], data: &[Vec<f64>]) -> Result<Vec<f64>, MetricError> {
    let n_t = data.first().ok_or(MetricError::Empty)?.len();
    if let Some(p) = pred.iter().chain(data).find(|p| p.len() != n_t) {
        return Err(MetricError::Mismatch(p.len(), n_t));
    }
    (0..n_t)
        .into_par_iter()
        .map(|k| {
            let a: Vec<f64> = pred.iter().map(|p| p[k]).collect();
            let b: Vec<f64> = data.iter().map(|p| p[k]).collect();
            w1_distance(&a, &b)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

/// Scott's rule `n^{-1/5} * std`.
pub fn scott_bandwidth(samples: &[f64]) -> f64 {
    (samples.len() as f64).powf(-0.2) * std_dev(samples)
}

/// Gaussian kernel density estimate evaluated at `grid`.
pub fn kde(samples: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    if !(bandwidth > 0.0) {
        return Err(MetricError::Bandwidth(bandwidth));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .par_iter()
        .map(|&y| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((y - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect())
}

/// Product-kernel density of 2-d samples on the grid `xs × ys`, row-major in `ys`.
pub fn kde2(samples: &[[f64; 2]], xs: &[f64], ys: &[f64], bandwidth: [f64; 2]) -> Result<Vec<f64>, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    for h in bandwidth {
        if !(h > 0.0) {
            return Err(MetricError::Bandwidth(h));
        }
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth[0] * bandwidth[1] * 2.0 * std::f64::consts::PI);
    Ok(xs
        .par_iter()
        .flat_map_iter(|&x| {
            ys.iter().map(move |&y| {
                norm * samples
                    .iter()
                    .map(|s| {
                        let u = (x - s[0]) / bandwidth[0];
                        let v = (y - s[1]) / bandwidth[1];
                        (-0.5 * (u * u + v * v)).exp()
                    })
                    .sum::<f64>()
            })
        })
        .collect())
}

/// Indices of interior local maxima of a sampled curve.
pub fn local_maxima(values: &[f64]) -> Vec<usize> {
    (1..values.len().saturating_sub(1))
        .filter(|&i| values[i] > values[i - 1] && values[i] >= values[i + 1])
        .collect()
}

fn distance_matrix(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = x[i]
                .iter()
                .zip(&x[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

fn double_center(d: &mut [f64], n: usize) {
    let row: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // symmetric, so column means equal row means
            d[i * n + j] += grand - row[i] - row[j];
        }
    }
}

/// Székely's sample distance correlation; rows are samples.
pub fn distance_correlation(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::Mismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 4 {
        return Err(MetricError::TooFew { needed: 4, got: n });
    }
    let mut a = distance_matrix(x);
    let mut b = distance_matrix(y);
    double_center(&mut a, n);
    double_center(&mut b, n);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let vxy = dot(&a, &b);
    let vxx = dot(&a, &a);
    let vyy = dot(&b, &b);
    if vxx <= 0.0 || vyy <= 0.0 {
        return Ok(0.0);
    }
    Ok((vxy.max(0.0) / (vxx * vyy).sqrt()).sqrt())
}

/// Matrix of pairwise distance correlations between the columns of `samples`.
pub fn dcor_matrix(samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MetricError> {
    let d = samples.first().ok_or(MetricError::Empty)?.len();
    let cols: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|c| samples.iter().map(|s| vec![s[c]]).collect())
        .collect();
    (0..d)
        .map(|i| (0..d).map(|j| distance_correlation(&cols[i], &cols[j])).collect())
        .collect()
}

/// Unbiased moments of a two-column sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub mean: [f64; 2],
    pub var: [f64; 2],
    pub cov: f64,
    pub rho: f64,
}

pub fn ensemble_stats(samples: &[[f64; 2]]) -> Result<PairStats, MetricError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let m = [0, 1].map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / n as f64);
    let moment = |c: usize, d: usize| {
        samples.iter().map(|s| (s[c] - m[c]) * (s[d] - m[d])).sum::<f64>() / (n - 1) as f64
    };
    let var = [moment(0, 0), moment(1, 1)];
    let cov = moment(0, 1);
    let rho = if var[0] > 0.0 && var[1] > 0.0 {
        cov / (var[0] * var[1]).sqrt()
    } else {
        0.0
    };
    Ok(PairStats { mean: m, var, cov, rho })
}

/// Distribution of the per-path OU parameters, as `(mean, std)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WbHyper {
    pub mu_w: f64,
    pub sigma_w: f64,
    pub mu_ybar: f64,
    pub sigma_ybar: f64,
}

impl WbHyper {
    /// From the rate and level distributions, with `W = -rate`.
    pub fn from_rate_level(rate: (f64, f64), level: (f64, f64)) -> Self {
        Self {
            mu_w: -rate.0,
            sigma_w: rate.1,
            mu_ybar: level.0,
            sigma_ybar: level.1,
        }
    }
}

/// Exact moments of `(W, b) = (-γ, γ ȳ)` for independent normal `γ` and `ȳ`.
pub fn theoretical_wb_stats(h: &WbHyper) -> PairStats {
    let (mg, sg) = (-h.mu_w, h.sigma_w);
    let (my, sy) = (h.mu_ybar, h.sigma_ybar);
    let var_b = (sg * sg + mg * mg) * (sy * sy + my * my) - (mg * my).powi(2);
    let cov = -my * sg * sg;
    PairStats {
        mean: [-mg, mg * my],
        var: [sg * sg, var_b],
        cov,
        rho: cov / (sg * var_b.sqrt()),
    }
}

/// Log-density of `(W, b)` under the change of variables from `(γ, ȳ)`.
pub fn log_density_wb(w: f64, b: f64, h: &WbHyper) -> Result<f64, MetricError> {
    if w == 0.0 {
        return Err(MetricError::SingularJacobian);
    }
    let ln_norm = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    Ok(ln_norm(w, h.mu_w, h.sigma_w) + ln_norm(-b / w, h.mu_ybar, h.sigma_ybar) - w.abs().ln())
}

/// `(∂_W log f, ∂_b log f)` of [`log_density_wb`].
pub fn analytic_score_wb(w: f64, b: f64, h: &WbHyper) -> Result<(f64, f64), MetricError> {
    if w == 0.0 {
        return Err(MetricError::SingularJacobian);
    }
    let sy2 = h.sigma_ybar * h.sigma_ybar;
    let u = b / w + h.mu_ybar;
    let dw = -1.0 / w - (w - h.mu_w) / (h.sigma_w * h.sigma_w) + b * u / (sy2 * w * w);
    let db = -u / (sy2 * w);
    Ok((dw, db))
}

/// The analytic `(W, b)` score as a sampler drift. Only meaningful away from
/// `W = 0`, where it returns a zero drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbScore(pub WbHyper);

impl Drift for WbScore {
    fn dim(&self) -> usize {
        2
    }

    fn drift(&self, w: &[f64]) -> Vec<f64> {
        analytic_score_wb(w[0], w[1], &self.0).map_or(vec![0.0, 0.0], |(a, b)| vec![a, b])
    }
}

/// One-dimensional 2-means clustering by Lloyd iterations from the extremes.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeans {
    /// Lower center first.
    pub centers: [f64; 2],
    pub assignment: Vec<usize>,
    pub counts: [usize; 2],
}

impl TwoMeans {
    /// Pooled within-cluster standard deviation.
    pub fn within_std(&self, values: &[f64]) -> f64 {
        let ss: f64 = values
            .iter()
            .zip(&self.assignment)
            .map(|(v, &c)| (v - self.centers[c]).powi(2))
            .sum();
        (ss / (values.len() as f64 - 2.0).max(1.0)).sqrt()
    }

    pub fn weights(&self) -> [f64; 2] {
        let n = (self.counts[0] + self.counts[1]) as f64;
        [self.counts[0] as f64 / n, self.counts[1] as f64 / n]
    }
}

pub fn two_means(values: &[f64]) -> Result<TwoMeans, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooFew {
            needed: 2,
            got: values.len(),
        });
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut centers = [lo, hi];
    let mut assignment = vec![0; values.len()];
    for _ in 0..100 {
        let split = 0.5 * (centers[0] + centers[1]);
        let next: Vec<usize> = values.iter().map(|&v| usize::from(v > split)).collect();
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for (v, &c) in values.iter().zip(&next) {
            sums[c] += v;
            counts[c] += 1;
        }
        for c in 0..2 {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    let mut counts = [0usize; 2];
    for &c in &assignment {
        counts[c] += 1;
    }
    Ok(TwoMeans {
        centers,
        assignment,
        counts,
    })
}

/// Fraction of `values[i]` inside `[lo[i], hi[i]]`.
pub fn coverage(values: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let inside = values
        .iter()
        .zip(lo.iter().zip(hi))
        .filter(|(v, (l, h))| *l <= *v && *v <= *h)
        .count();
    inside as f64 / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn paper_hyper() -> WbHyper {
        WbHyper::from_rate_level((8.0, 0.8), (1.0, 0.1))
    }

    #[test]
    fn kde2_integrates_to_one() {
        let samples = [[0.0, 0.0], [1.0, -1.0], [0.5, 0.2]];
        let grid: Vec<f64> = (0..161).map(|i| -4.0 + i as f64 * 0.05).collect();
        let d = kde2(&samples, &grid, &grid, [0.4, 0.5]).unwrap();
        let mass: f64 = d.iter().sum::<f64>() * 0.05 * 0.05;
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_distance(&[1.0, 2.0, 5.0], &[5.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(w1_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(w1_distance(&[0.0, 1.0], &[0.0, 2.0]).unwrap(), 0.5);
        assert_eq!(w1_distance(&[], &[1.0]), Err(MetricError::Empty));
        // unequal sizes: {0} vs {0, 1} moves half the mass by 1
        assert_eq!(w1_distance(&[0.0], &[0.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn cdf_steps() {
        let c = EmpiricalCdf::new(&[2.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.eval(0.5), 0.0);
        assert_eq!(c.eval(2.0), 0.75);
        assert_eq!(c.eval(3.0), 1.0);
    }

    #[test]
    fn kde_examples() {
        let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.025).collect();
        let d = kde(&[0.0], &grid, 0.5).unwrap();
        let n0 = (-0.5 * (1.0f64 / 0.5).powi(2)).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((d[440] - n0).abs() < 1e-15);
        let sym = kde(&[-1.0, 1.0], &grid, 0.3).unwrap();
        for i in 0..grid.len() {
            assert!((sym[i] - sym[grid.len() - 1 - i]).abs() < 1e-12);
        }
        let trap: f64 = sym.windows(2).map(|w| 0.5 * (w[0] + w[1]) * 0.025).sum();
        assert!((trap - 1.0).abs() < 1e-3);
        assert_eq!(kde(&[0.0], &grid, 0.0), Err(MetricError::Bandwidth(0.0)));
    }

    #[test]
    fn kde_peak_of_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.05).collect();
        let d = kde(&s, &grid, scott_bandwidth(&s)).unwrap();
        let peak = d.iter().copied().fold(0.0, f64::max);
        assert!((peak / 0.3989422804014327 - 1.0).abs() < 0.03);
    }

    #[test]
    fn dcor_examples() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7]).collect();
        assert!((distance_correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<Vec<f64>> = x.iter().map(|v| vec![3.0 - 2.0 * v[0]]).collect();
        assert!((distance_correlation(&x, &y).unwrap() - 1.0).abs() < 1e-10);
        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let y: Vec<Vec<f64>> = [0.0, 1.0, 0.0, 1.0].iter().map(|&v| vec![v]).collect();
        // brute-force double-centering oracle
        assert!((distance_correlation(&x, &y).unwrap() - 0.5266403878479267).abs() < 1e-12);
        let c: Vec<Vec<f64>> = vec![vec![1.0]; 5];
        assert_eq!(distance_correlation(&c, &c).unwrap(), 0.0);
        assert!(distance_correlation(&x[..3], &y[..3]).is_err());
    }

    #[test]
    fn ensemble_stats_examples() {
        let s = ensemble_stats(&[[1.0, 2.0]; 5]).unwrap();
        assert_eq!((s.var, s.cov), ([0.0, 0.0], 0.0));
        let pts = [[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [4.0, 7.0]];
        let a = ensemble_stats(&pts).unwrap();
        let swapped: Vec<[f64; 2]> = pts.iter().map(|p| [p[1], p[0]]).collect();
        let b = ensemble_stats(&swapped).unwrap();
        assert_eq!((a.var[0], a.var[1], a.cov), (b.var[1], b.var[0], b.cov));
    }

    #[test]
    fn generator_samples_reproduce_theory() {
        let h = paper_hyper();
        let t = theoretical_wb_stats(&h);
        assert!((t.var[1] - 1.2864).abs() < 1e-12);
        assert!((t.cov + 0.64).abs() < 1e-12);
        assert!((t.rho + 0.7056).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let s: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let g = 8.0 + 0.8 * rng.sample::<f64, _>(StandardNormal);
                let y = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
                [-g, g * y]
            })
            .collect();
        let e = ensemble_stats(&s).unwrap();
        let nf = n as f64;
        assert!((e.mean[0] - t.mean[0]).abs() < 3.0 * (t.var[0] / nf).sqrt());
        assert!((e.mean[1] - t.mean[1]).abs() < 3.0 * (t.var[1] / nf).sqrt());
        // variance standard errors from the normal-theory approximation
        assert!((e.var[0] - t.var[0]).abs() < 3.0 * t.var[0] * (2.0 / nf).sqrt());
        assert!((e.var[1] - t.var[1]).abs() < 3.0 * t.var[1] * (2.0 / nf).sqrt());
        assert!((e.rho - t.rho).abs() < 3.0 * (1.0 - t.rho * t.rho) / nf.sqrt());
    }

    #[test]
    fn score_plug_in_values() {
        let h = paper_hyper();
        let (dw, db) = analytic_score_wb(-8.0, 8.0, &h).unwrap();
        assert_eq!(db, 0.0);
        assert!((dw - 0.125).abs() < 1e-15);
        assert_eq!(analytic_score_wb(0.0, 1.0, &h), Err(MetricError::SingularJacobian));
    }

    #[test]
    fn score_matches_finite_differences() {
        let h = paper_hyper();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let w = rng.random_range(-10.0..-6.0);
            let b = rng.random_range(6.0..10.0);
            let (dw, db) = analytic_score_wb(w, b, &h).unwrap();
            let e = 1e-5;
            let f = |w, b| log_density_wb(w, b, &h).unwrap();
            let fw = (f(w + e, b) - f(w - e, b)) / (2.0 * e);
            let fb = (f(w, b + e) - f(w, b - e)) / (2.0 * e);
            assert!((fw - dw).abs() <= 1e-6 * dw.abs().max(1.0), "{fw} {dw}");
            assert!((fb - db).abs() <= 1e-6 * db.abs().max(1.0), "{fb} {db}");
        }
    }

    #[test]
    fn two_means_separates_clusters() {
        let v = [1.0, 1.2, 0.8, 9.0, 9.5, 8.5, 1.1];
        let t = two_means(&v).unwrap();
        assert_eq!(t.counts, [4, 3]);
        assert!((t.centers[0] - 1.025).abs() < 1e-12 && (t.centers[1] - 9.0).abs() < 1e-12);
        assert_eq!(t.assignment, vec![0, 0, 0, 1, 1, 1, 0]);
    }

    #[test]
    fn coverage_counts_inclusive() {
        assert_eq!(coverage(&[0.0, 1.0, 2.0, 3.0], &[0.0; 4], &[2.0; 4]), 0.75);
    }

    proptest! {
        #[test]
        fn w1_triangle_and_symmetry(
            a in prop::collection::vec(-5f64..5.0, 1..20),
            b in prop::collection::vec(-5f64..5.0, 1..20),
            c in prop::collection::vec(-5f64..5.0, 1..20),
        ) {
            let ab = w1_distance(&a, &b).unwrap();
            let bc = w1_distance(&b, &c).unwrap();
            let ac = w1_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - w1_distance(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn dcor_affine_invariance(
            xs in prop::collection::vec((-3f64..3.0, -3f64..3.0), 6..15),
            angle in 0f64..6.28,
            scale in 0.1f64..10.0,
            shift in -5f64..5.0,
        ) {
            let x: Vec<Vec<f64>> = xs.iter().map(|p| vec![p.0, p.1]).collect();
            let y: Vec<Vec<f64>> = xs.iter().map(|p| vec![p.0 * p.1 + p.1.sin()]).collect();
            let (s, c) = angle.sin_cos();
            let xt: Vec<Vec<f64>> = x
                .iter()
                .map(|v| vec![scale * (c * v[0] - s * v[1]) + shift, scale * (s * v[0] + c * v[1]) - shift])
                .collect();
            let yt: Vec<Vec<f64>> = y.iter().map(|v| vec![-scale * v[0] + shift]).collect();
            let d0 = distance_correlation(&x, &y).unwrap();
            let d1 = distance_correlation(&xt, &yt).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-10, "{} {}", d0, d1);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d0));
        }
    }
}
