//! The three synthetic data generators, summarised at a few grid times.
//!
//! cargo run --release --example generate_data

use lhn::datagen::{
    generate_ou_dataset, generate_regression_dataset, generate_schlogl_dataset, OuDataConfig, RegressionConfig,
    SchloglConfig,
};
use lhn::metrics::two_means;
use lhn::trajectory::TrajectoryEnsemble;

fn summary(name: &str, e: &TrajectoryEnsemble) {
    println!("{name}: {} paths x {} times", e.n_traj(), e.n_times());
    let n = e.n_times();
    for k in [0, n / 4, n / 2, n - 1] {
        println!(
            "  t = {:7.3}  mean {:10.4}  std {:10.4}",
            e.times()[k],
            e.mean_at(k, 0),
            e.std_at(k, 0).unwrap_or(0.0)
        );
    }
}

fn main() -> anyhow::Result<()> {
    summary("OU", &generate_ou_dataset(&OuDataConfig::default(), 1)?);
    summary("regression", &generate_regression_dataset(&RegressionConfig::default(), 1)?);
    let s = generate_schlogl_dataset(&SchloglConfig::default(), 1)?;
    summary("Schlogl", &s);
    let split = two_means(&s.slice(s.n_times() - 1, 0))?;
    let w = split.weights();
    println!(
        "  final-time modes {:.1} ({:.2}) and {:.1} ({:.2})",
        split.centers[0], w[0], split.centers[1], w[1]
    );
    Ok(())
}
