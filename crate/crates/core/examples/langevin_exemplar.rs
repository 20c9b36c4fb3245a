//! Langevin exemplar: a two-parameter linear ODE fitted to an ensemble of
//! Ornstein-Uhlenbeck mean paths with random rate and level. Prints the
//! pooled (W, b) statistics of the trained sampler next to the closed form.
//!
//! cargo run --release --example langevin_exemplar -- [config.toml]

use lhn::config::{load_config, Exemplar, ExperimentConfig};
use lhn::datagen::generate_ou_dataset;
use lhn::metrics::{ensemble_stats, theoretical_wb_stats, WbHyper};
use lhn::trainer::{fit_mle, train_with_observer};

fn main() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path.as_ref())?,
        None => ExperimentConfig {
            seed: Some(2024),
            ..ExperimentConfig::preset(Exemplar::Ou)
        },
    };
    let seed = cfg.seed()?;
    let data = generate_ou_dataset(&cfg.data.ou, seed)?;
    let model = cfg.build_model(&data)?;
    let mut w: Option<Vec<f64>> = None;
    for stage in cfg.mle_configs(seed) {
        w = Some(fit_mle(&model, &data, &stage, w.as_deref())?.params.into_vec());
    }
    let w_mle = w.expect("MLE stage");
    println!("MLE (W, b) = ({:.4}, {:.4})", w_mle[0], w_mle[1]);

    let t0 = std::time::Instant::now();
    let report = train_with_observer(&model, &data, &w_mle, &cfg.train_config(seed), &mut |r, _, _| {
        if r.epoch % 10 == 0 {
            println!(
                "epoch {:4}  -elbo {:.6e}  w1 {:.4}  mean {:.3?}  std {:.3?}",
                r.epoch, r.loss, r.w1, r.w_mean, r.w_std
            );
        }
    })?;
    println!("training took {:.1}s", t0.elapsed().as_secs_f64());

    let mut pooled = Vec::new();
    for s in 1..=10 {
        for w in report.sample_posterior(s, cfg.sampler.n_replicas)? {
            pooled.push([w[0], w[1]]);
        }
    }
    let got = ensemble_stats(&pooled)?;
    let ou = &cfg.data.ou;
    let theory = theoretical_wb_stats(&WbHyper::from_rate_level(
        (ou.rate.mean, ou.rate.std),
        (ou.level.mean, ou.level.std),
    ));
    println!("{} pooled samples", pooled.len());
    println!("{:>8} {:>10} {:>10}", "", "LS", "theory");
    for (name, a, b) in [
        ("E[W]", got.mean[0], theory.mean[0]),
        ("E[b]", got.mean[1], theory.mean[1]),
        ("V[W]", got.var[0], theory.var[0]),
        ("V[b]", got.var[1], theory.var[1]),
        ("rho", got.rho, theory.rho),
    ] {
        println!("{name:>8} {a:>10.4} {b:>10.4}");
    }
    Ok(())
}
