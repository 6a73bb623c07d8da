//! Runs the experiment grid and prints mean suboptimality per cell.
//!
//! ```text
//! cargo run --release --example experiment_grid -- [config.toml]
//! ```
//!
//! Without a config, a reduced truthful-only grid at `d = 16`, `k = 5` runs in
//! a few seconds.

use stratrlhf::bench::{run_experiment, ExperimentConfig, Regime};
use stratrlhf::policy::Algorithm;

fn main() -> stratrlhf::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => {
            let mut cfg = ExperimentConfig::paper_scale();
            cfg.regime = Regime::Truthful;
            cfg.seeds = 3;
            cfg
        }
    };
    let out = run_experiment(&cfg)?;
    println!("{:<18} {:>5} {:>10} {:>8} {:>7} {:>8}", "algorithm", "n", "regime", "subopt", "se", "gain");
    for c in &out.summary.cells {
        println!(
            "{:<18} {:>5} {:>10} {:>8.3} {:>7.3} {:>8}",
            c.algorithm.name(),
            c.n,
            c.regime.name(),
            c.subopt_mean,
            c.subopt_se,
            c.gain_mean.map_or("-".into(), |g| format!("{g:+.3}"))
        );
    }
    for &n in &cfg.n_grid {
        let diff = |a: Algorithm| -> Option<f64> {
            let s = out.summary.cell(a, n, Regime::Strategic)?;
            let t = out.summary.cell(a, n, Regime::Truthful)?;
            Some((s.subopt_mean - t.subopt_mean) / t.optimal_welfare_mean)
        };
        if let (Some(naive), Some(momle)) = (diff(Algorithm::NaiveMle), diff(Algorithm::PessimisticMomle)) {
            println!("n={n}: strategic - truthful (units of W*): naive {naive:+.3}, momle {momle:+.3}");
        }
    }
    for e in &out.summary.errors {
        eprintln!("error: {e}");
    }
    Ok(())
}
