//! Bayesian-last-layer variants on a static 1-8-8-1 regression toy. Trains
//! the fixed and re-optimized variants and reports how often fresh noisy
//! observations fall inside the 95% predictive band.
//!
//! cargo run --release --example bll_variants -- [epochs] [lr] [steps]

use lhn::config::{Exemplar, ExperimentConfig};
use lhn::datagen::generate_regression_dataset;
use lhn::trainer::{fit_mle, train, Variant};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = ExperimentConfig::preset(Exemplar::Regression);
    if let Some(e) = args.next() {
        cfg.train.epochs = e.parse()?;
    }
    if let Some(lr) = args.next() {
        cfg.train.lr = lr.parse()?;
    }
    if let Some(k) = args.next() {
        cfg.sampler.n_steps = k.parse()?;
    }
    let seed = 5;
    let data = generate_regression_dataset(&cfg.data.regression, seed)?;
    let held_out = generate_regression_dataset(&cfg.data.regression, seed + 1000)?;
    let model = cfg.build_model(&data)?;

    let mut w_mle: Option<Vec<f64>> = None;
    for stage in cfg.mle_configs(seed) {
        let r = fit_mle(&model, &data, &stage, w_mle.as_deref())?;
        w_mle = Some(r.params.into_vec());
    }
    let w_mle = w_mle.expect("MLE stage");

    for variant in [Variant::BllFixed, Variant::BllReopt] {
        cfg.train.variant = variant;
        let t0 = std::time::Instant::now();
        let report = train(&model, &data, &w_mle, &cfg.train_config(seed))?;
        let (d_mle, _) = report.partition.split(&w_mle)?;
        let moved = d_mle.iter().zip(&report.w_d).filter(|(a, b)| a != b).count();

        if let (Some(a), Some(b)) = (report.trace.first(), report.trace.last()) {
            println!("{:>9}: -elbo {:.4e} -> {:.4e}", variant.name(), a.loss, b.loss);
        }
        let n = report.predictions.len() as f64;
        let sigma = &report.sigma.combined[0];
        let (mut inside, mut total) = (0usize, 0usize);
        let mut spread = 0.0;
        for i in 0..held_out.n_times() {
            let mean = report.predictions.iter().map(|p| p[i]).sum::<f64>() / n;
            let var = report.predictions.iter().map(|p| (p[i] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            spread += var.sqrt() / held_out.n_times() as f64;
            let half = 1.96 * (var + sigma[i] * sigma[i]).sqrt();
            for j in 0..held_out.n_traj() {
                total += 1;
                if (held_out.path(j)[i] - mean).abs() <= half {
                    inside += 1;
                }
            }
        }
        println!(
            "{:>9}: {:.1}s, {} of {} deterministic weights moved, replica std {:.3} vs sigma {:.3}, band coverage {:.3}",
            variant.name(),
            t0.elapsed().as_secs_f64(),
            moved,
            d_mle.len(),
            spread,
            sigma.iter().sum::<f64>() / sigma.len() as f64,
            inside as f64 / total as f64
        );
    }
    Ok(())
}
