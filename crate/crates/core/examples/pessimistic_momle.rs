//! All four aggregation rules on one truthful instance: each labeler's data
//! is sampled, every rule picks a policy, and welfare is scored against the
//! true parameters.
//!
//! ```text
//! cargo run --release --example pessimistic_momle
//! ```

use stratrlhf::env::{generate_instance, generate_queries, stream_rng, InstanceConfig};
use stratrlhf::estimation::EstimatorConfig;
use stratrlhf::mechanism::run_algorithm;
use stratrlhf::policy::{evaluate, Algorithm};
use stratrlhf::preference::sample_dataset;

fn main() -> stratrlhf::Result<()> {
    let cfg = InstanceConfig::new(4, 5, 2000).with_seed(11);
    let mut rng = stream_rng(cfg.seed, 0);
    let inst = generate_instance(&cfg, &mut rng)?;
    let queries = generate_queries(&inst, &mut rng)?;
    let datasets = inst
        .true_params
        .iter()
        .zip(&queries)
        .map(|(theta, q)| sample_dataset(theta, q, &mut rng))
        .collect::<stratrlhf::Result<Vec<_>>>()?;
    // A small c_f keeps the boxes informative at this sample size.
    let est = EstimatorConfig {
        c_f: 0.1,
        ..EstimatorConfig::default()
    };
    println!("{:<18} {:>8} {:>8} {:>8}", "algorithm", "W", "W*", "alpha");
    for algorithm in Algorithm::ALL {
        let policy = run_algorithm(algorithm, &datasets, &est)?;
        let w = evaluate(&policy, &inst)?;
        println!(
            "{:<18} {:>8.4} {:>8.4} {:>8}",
            algorithm.name(),
            w.welfare,
            w.optimal_welfare,
            w.alpha.map_or("-".into(), |a| format!("{a:.3}"))
        );
    }
    Ok(())
}
