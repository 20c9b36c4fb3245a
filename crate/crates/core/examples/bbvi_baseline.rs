//! Gaussian BBVI on the Langevin exemplar with a full 2x2 covariance.
//!
//! cargo run --release --example bbvi_baseline -- [epochs]

use lhn::bbvi::{fit_bbvi, Covariance};
use lhn::config::{Exemplar, ExperimentConfig};
use lhn::datagen::generate_ou_dataset;
use lhn::trainer::fit_mle;

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::preset(Exemplar::Ou);
    if let Some(e) = std::env::args().nth(1) {
        cfg.bbvi.epochs = e.parse()?;
    }
    let seed = 2024;
    let data = generate_ou_dataset(&cfg.data.ou, seed)?;
    let model = cfg.build_model(&data)?;
    let mut w: Option<Vec<f64>> = None;
    for stage in cfg.mle_configs(seed) {
        w = Some(fit_mle(&model, &data, &stage, w.as_deref())?.params.into_vec());
    }
    let w_mle = w.expect("MLE stage");
    println!("MLE (W, b) = ({:.4}, {:.4})", w_mle[0], w_mle[1]);

    let mut bc = cfg.bbvi_config(seed);
    bc.covariance = Covariance::Full2;
    let t0 = std::time::Instant::now();
    let r = fit_bbvi(&model, &data, &w_mle, &bc)?;
    let s = r.surrogate.sigma();
    println!(
        "{:.1}s: mean ({:.4}, {:.4}), std ({:.4}, {:.4}), rho {:.3}",
        t0.elapsed().as_secs_f64(),
        r.surrogate.mu[0],
        r.surrogate.mu[1],
        s[0],
        s[1],
        r.surrogate.rho()
    );
    if let (Some(a), Some(b)) = (r.trace.first(), r.trace.last()) {
        println!("negative ELBO {:.4e} -> {:.4e}", a.loss, b.loss);
    }
    Ok(())
}
