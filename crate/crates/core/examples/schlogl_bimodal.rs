//! Schlögl model: stochastic simulation data with two stable states, a neural
//! ODE fitted to the ensemble mean, and a last-layer Langevin hypernetwork
//! trained on the two-mode likelihood. Prints the final-time predictive split.
//!
//! cargo run --release --example schlogl_bimodal -- [config.toml]
//!
//! Without an argument the built-in Schlögl preset is used.

use lhn::config::{load_config, Exemplar, ExperimentConfig};
use lhn::datagen::generate_schlogl_dataset;
use lhn::metrics::two_means;
use lhn::trainer::{fit_mle, train_with_observer};

fn main() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => load_config(path.as_ref())?,
        None => ExperimentConfig {
            seed: Some(11),
            ..ExperimentConfig::preset(Exemplar::Schlogl)
        },
    };
    let seed = cfg.seed()?;
    let scaling = cfg.data.scaling();
    let raw = generate_schlogl_dataset(&cfg.data.schlogl, seed)?;
    let last = raw.slice(raw.n_times() - 1, 0);
    let split = two_means(&last)?;
    println!(
        "data at t = {}: modes {:.1} / {:.1}, weights {:.2} / {:.2}",
        raw.times()[raw.n_times() - 1],
        split.centers[0],
        split.centers[1],
        split.weights()[0],
        split.weights()[1]
    );

    let data = raw.to_model_units(&scaling);
    let model = cfg.build_model(&data)?;
    let t0 = std::time::Instant::now();
    let mut params: Option<Vec<f64>> = None;
    for stage in cfg.mle_configs(seed) {
        let r = fit_mle(&model, &data, &stage, params.as_deref())?;
        println!("MLE stage: loss {:.4e} -> {:.4e}", r.initial_loss, r.best_loss);
        params = Some(r.params.into_vec());
    }
    let w_mle = params.expect("MLE stage");
    let pred = model.predict(&w_mle, None, data.times())?;
    println!(
        "MLE fitted in {:.1}s, final value {:.1}",
        t0.elapsed().as_secs_f64(),
        scaling.to_raw(pred[pred.len() - 1])
    );

    let n_t = data.n_times();
    let t0 = std::time::Instant::now();
    let report = train_with_observer(&model, &data, &w_mle, &cfg.train_config(seed), &mut |r, _, _| {
        if r.epoch % 10 == 0 {
            println!("epoch {:4}  -elbo {:.5e}  kl {:.3e}  w1 {:.4}", r.epoch, r.loss, r.kl, r.w1);
        }
    })?;
    println!("training took {:.1}s", t0.elapsed().as_secs_f64());

    let finals: Vec<f64> = report.predictions.iter().map(|p| scaling.to_raw(p[n_t - 1])).collect();
    let split = two_means(&finals)?;
    let gap = (split.centers[1] - split.centers[0]).abs();
    println!(
        "predicted final value: centers {:.1} / {:.1}, weights {:.2} / {:.2}, gap / within-std = {:.2}",
        split.centers[0],
        split.centers[1],
        split.weights()[0],
        split.weights()[1],
        gap / split.within_std(&finals)
    );
    Ok(())
}
