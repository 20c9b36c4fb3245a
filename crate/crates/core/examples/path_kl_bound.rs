//! Path-space KL between two OU processes, estimated along sampled posterior
//! paths, against the exact KL of their marginals at the final time.
//!
//! cargo run --release --example path_kl_bound

use lhn::datagen::path_rng;
use lhn::loss::{kl_normal, path_kl};
use rand::Rng;
use rand_distr::StandardNormal;

fn marginal(rate: f64, level: f64, mean0: f64, sd0: f64, tau: f64) -> (f64, f64) {
    let e = (-rate * tau).exp();
    (level + (mean0 - level) * e, (sd0 * sd0 * e * e + (1.0 - e * e) / rate).sqrt())
}

fn main() {
    let (n_rep, n_steps, dtau) = (4000, 1000, 1e-3);
    let tau = n_steps as f64 * dtau;
    // posterior: rate 2 towards 1; prior: rate 1 towards 0; both start at N(0, 0.5²)
    let (a, m, c, m0, s0) = (2.0, 1.0, 1.0, 0.0, 0.5);
    let mut post = Vec::with_capacity(n_rep);
    let mut prior = Vec::with_capacity(n_rep);
    for r in 0..n_rep {
        let mut rng = path_rng(17, r as u64);
        let mut w = s0 * rng.sample::<f64, _>(StandardNormal);
        let (mut fs, mut f0) = (Vec::new(), Vec::new());
        for _ in 0..n_steps {
            let d = -a * (w - m);
            fs.push(d);
            f0.push(-c * (w - m0));
            w += d * dtau + std::f64::consts::SQRT_2 * dtau.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        post.push(fs);
        prior.push(f0);
    }
    let est = path_kl(&post, &prior, 1.0, dtau);
    let (mp, sp) = marginal(a, m, 0.0, s0, tau);
    let (mq, sq) = marginal(c, m0, 0.0, s0, tau);
    println!("path KL estimate      {est:.4}");
    println!("marginal KL at tau={tau} {:.4}", kl_normal(mp, sp, mq, sq));
}
