//! The exact score of the (W, b) parameter law of the OU generator used as
//! sampler drift, with no training. Compares endpoint moments with the closed
//! form.
//!
//! cargo run --release --example analytic_score_sampler

use lhn::metrics::{ensemble_stats, theoretical_wb_stats, WbHyper, WbScore};
use lhn::sampler::{simulate_replicas, GammaSchedule, SamplerConfig};

fn main() -> anyhow::Result<()> {
    let h = WbHyper::from_rate_level((8.0, 0.8), (1.0, 0.1));
    let cfg = SamplerConfig {
        dtau: 1e-3,
        n_steps: 10_000,
        n_replicas: 2000,
        schedule: GammaSchedule::constant(),
        eps_init: 1e-5,
        seed: 3,
    };
    let ends = simulate_replicas(&WbScore(h), &cfg, &[h.mu_w, -h.mu_w * h.mu_ybar], false)?.endpoints;
    let pairs: Vec<[f64; 2]> = ends.iter().map(|w| [w[0], w[1]]).collect();
    let got = ensemble_stats(&pairs)?;
    let want = theoretical_wb_stats(&h);
    println!("{:>6} {:>10} {:>10}", "", "sampled", "exact");
    for (name, a, b) in [
        ("E[W]", got.mean[0], want.mean[0]),
        ("E[b]", got.mean[1], want.mean[1]),
        ("V[W]", got.var[0], want.var[0]),
        ("V[b]", got.var[1], want.var[1]),
        ("rho", got.rho, want.rho),
    ] {
        println!("{name:>6} {a:>10.4} {b:>10.4}");
    }
    Ok(())
}
