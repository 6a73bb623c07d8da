//! One labeler searches for a profitable misreport with SPSA, against the
//! naive MLE rule and against the pessimistic median of MLEs. Pass a path to
//! also write the naive attack's trajectory as CSV.
//!
//! ```text
//! cargo run --release --example spsa_attack -- [trajectory.csv]
//! ```

use stratrlhf::env::{generate_queries, instance_from_config, stream_rng, InstanceConfig};
use stratrlhf::estimation::EstimatorConfig;
use stratrlhf::mechanism::ActionSpace;
use stratrlhf::policy::Algorithm;
use stratrlhf::strategic::{spsa_attack, AttackConfig, ReplicationPool, SampledGame};

fn main() -> stratrlhf::Result<()> {
    let inst = instance_from_config(&InstanceConfig::new(2, 5, 50).with_seed(5))?;
    let queries = generate_queries(&inst, &mut stream_rng(inst.seed, 1))?;
    let est = EstimatorConfig {
        c_f: 0.1,
        ..EstimatorConfig::default()
    };
    let pool = ReplicationPool::new(&inst, &queries, &est, 32, 9)?;
    let attack = AttackConfig {
        seed: 1,
        ..AttackConfig::default()
    };
    for algorithm in [Algorithm::NaiveMle, Algorithm::PessimisticMomle] {
        let game = SampledGame {
            pool: &pool,
            algorithm,
            labeler: 0,
            space: &ActionSpace::Hyperrectangle,
        };
        let res = spsa_attack(&game, inst.bound_b, &attack)?;
        println!(
            "{:<18} truthful {:.4}  best {:.4}  gain {:+.4}  report {:?}",
            algorithm.name(),
            res.truthful_utility,
            res.best_utility,
            res.gain,
            res.best_report.as_slice()
        );
        if algorithm == Algorithm::NaiveMle {
            if let Some(path) = std::env::args().nth(1) {
                res.write_trajectory_csv(std::fs::File::create(path)?)?;
            }
        }
    }
    println!("truth of labeler 0: {:?}", inst.true_params[0].as_slice());
    Ok(())
}
