//! Fits the Bradley-Terry MLE for one labeler at growing sample sizes and
//! prints the estimation error in both the Euclidean and the data norm.
//!
//! ```text
//! cargo run --release --example bradley_terry_fit
//! ```

use stratrlhf::env::{generate_instance, generate_queries, stream_rng, InstanceConfig};
use stratrlhf::estimation::{default_reg, fit_mle};
use stratrlhf::linalg::quad_norm;
use stratrlhf::preference::sample_dataset;

fn main() -> stratrlhf::Result<()> {
    println!("{:>6} {:>10} {:>10} {:>6}", "n", "l2 err", "M err", "iters");
    for n in [50, 200, 800, 3200] {
        let cfg = InstanceConfig::new(4, 1, n).with_seed(7);
        // Same truth at every n; fresh queries and labels.
        let inst = generate_instance(&cfg, &mut stream_rng(cfg.seed, 0))?;
        let mut rng = stream_rng(cfg.seed, n as u64);
        let queries = generate_queries(&inst, &mut rng)?;
        let theta = &inst.true_params[0];
        let data = sample_dataset(theta, &queries[0], &mut rng)?;
        let fit = fit_mle(data.observations(), inst.bound_b, default_reg(inst.d, n, 0.1), 1e-8, 5000)?;
        let err = &fit.theta_hat - theta;
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>6}",
            n,
            err.norm(),
            quad_norm(&err, &fit.metric()),
            fit.iterations
        );
    }
    Ok(())
}
