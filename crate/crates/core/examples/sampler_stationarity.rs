//! Euler-Maruyama replicas driven by the standard-normal score `-w` settle
//! into N(0, I). Prints per-coordinate endpoint mean and variance.
//!
//! cargo run --release --example sampler_stationarity

use lhn::sampler::{simulate_replicas, Drift, GammaSchedule, SamplerConfig};

struct StandardNormalScore(usize);

impl Drift for StandardNormalScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn drift(&self, w: &[f64]) -> Vec<f64> {
        w.iter().map(|x| -x).collect()
    }
}

fn main() -> anyhow::Result<()> {
    let dim = 4;
    let cfg = SamplerConfig {
        dtau: 1e-2,
        n_steps: 1000,
        n_replicas: 4000,
        schedule: GammaSchedule::constant(),
        eps_init: 1e-5,
        seed: 1,
    };
    let start = vec![3.0; dim];
    let ends = simulate_replicas(&StandardNormalScore(dim), &cfg, &start, false)?.endpoints;
    let n = ends.len() as f64;
    println!("{} replicas from w = 3 after tau = {}", ends.len(), cfg.tau_final());
    for c in 0..dim {
        let m = ends.iter().map(|w| w[c]).sum::<f64>() / n;
        let v = ends.iter().map(|w| (w[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
        println!("coordinate {c}: mean {m:+.4} (SE {:.4}), variance {v:.4}", (v / n).sqrt());
    }
    Ok(())
}
