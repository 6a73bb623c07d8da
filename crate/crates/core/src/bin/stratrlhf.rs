//! Command-line front end. Exit codes: 0 when every check passes, 1 when a
//! check fails, 2 for bad configuration or unreadable input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stratrlhf::bench::{
    concentration_suite, run_experiment, run_mdp_demo, verify_counterexamples, ConcentrationConfig, ExperimentConfig,
    MdpDemoConfig,
};
use stratrlhf::error::{Error, Result};
use stratrlhf::policy::Algorithm;
use stratrlhf::strategic::{sign_dominance, SignDominanceConfig};

#[derive(Parser)]
#[command(name = "stratrlhf", version, about = "Strategic labelers in offline RLHF: experiments and checks")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Flags {
    /// Output directory (defaults to the config's `output`, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write tab-separated tables instead of CSV.
    #[arg(long, global = true)]
    tsv: bool,
    /// Override the confidence constant c_f.
    #[arg(long, global = true)]
    cf: Option<f64>,
    /// Dump attack or solver traces.
    #[arg(long, global = true)]
    trace: bool,
    /// Attack against the exact label distribution (run only, n <= 12).
    #[arg(long, global = true)]
    exact: bool,
    /// Dump datasets with the parameter each was labeled from (run only).
    #[arg(long, global = true)]
    diagnostics: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid from a TOML config.
    Run { config: PathBuf },
    /// Check the counterexamples and sign dominance exactly.
    Verify,
    /// Concentration suites for the MLE and the median.
    Conc { config: Option<PathBuf> },
    /// Pessimistic median policy on small random MDPs.
    MdpDemo { config: Option<PathBuf> },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn status(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn write_table<T: Serialize>(dir: &Path, stem: &str, tsv: bool, rows: &[T]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (ext, delim) = if tsv { ("tsv", b'\t') } else { ("csv", b',') };
    let mut w = csv::WriterBuilder::new()
        .delimiter(delim)
        .from_path(dir.join(format!("{stem}.{ext}")))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn set_cf(target: &mut f64, cf: Option<f64>) -> Result<()> {
    if let Some(c) = cf {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("--cf must be a finite non-negative number, got {c}")));
        }
        *target = c;
    }
    Ok(())
}

fn cmd_run(flags: &Flags, config: &Path) -> Result<bool> {
    let mut cfg: ExperimentConfig = toml::from_str(&read(config)?)?;
    set_cf(&mut cfg.estimator.c_f, flags.cf)?;
    cfg.exact |= flags.exact;
    cfg.trace |= flags.trace;
    cfg.diagnostics |= flags.diagnostics;
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    let dir = flags
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    out.write_to_dir(&dir, flags.tsv)?;
    println!("{:<18} {:>6} {:>9} {:>10} {:>10} {:>10}", "algorithm", "n", "regime", "subopt", "se", "gain");
    for c in &out.summary.cells {
        println!(
            "{:<18} {:>6} {:>9} {:>10.5} {:>10.5} {:>10}",
            c.algorithm.to_string(),
            c.n,
            c.regime.name(),
            c.subopt_mean,
            c.subopt_se,
            c.gain_mean.map_or("-".to_string(), |g| format!("{g:.5}"))
        );
    }
    for e in &out.summary.errors {
        eprintln!("cell failed: {e}");
    }
    println!("wrote {}", dir.display());
    Ok(out.summary.errors.is_empty())
}

fn cmd_verify(flags: &Flags) -> Result<bool> {
    let report = verify_counterexamples()?;
    let mut ok = report.passed();
    for c in &report.checks {
        println!("{} {}: {} (expected {})", status(c.passed), c.name, c.actual, c.expected);
    }
    let mut dominance = Vec::new();
    for algorithm in Algorithm::ALL {
        let r = sign_dominance(&SignDominanceConfig {
            algorithm,
            ..SignDominanceConfig::default()
        })?;
        let passed = r.passed(1e-9);
        ok &= passed;
        println!(
            "{} sign dominance {algorithm}: flip gain {:.3e}, exaggeration loss {:.3e} over {} reports",
            status(passed),
            r.max_flip_gain,
            r.max_exaggeration_loss,
            r.reports_checked
        );
        dominance.push((algorithm, r));
    }
    if let Some(dir) = &flags.out {
        write_json(dir, "verify.json", &report)?;
        write_json(dir, "sign_dominance.json", &dominance)?;
        write_table(dir, "collapse", flags.tsv, &report.ratios)?;
    }
    Ok(ok)
}

fn cmd_conc(flags: &Flags, config: Option<&Path>) -> Result<bool> {
    let mut cfg = match config {
        Some(p) => ConcentrationConfig::from_toml_str(&read(p)?)?,
        None => ConcentrationConfig::default(),
    };
    set_cf(&mut cfg.mle.c_f, flags.cf)?;
    let r = concentration_suite(&cfg)?;
    for s in [&r.mle, &r.median_k, &r.median_d] {
        println!("{} {}: slope {:.3} (target {:+.1})", status(s.passed), s.name, s.slope, s.target);
    }
    let c = &r.coverage;
    println!(
        "{} MLE coverage at c_f {}: {:.3} (calibrated c_f {:.3})",
        status(c.passed),
        c.c_f,
        c.coverage,
        c.calibrated_c_f
    );
    if let Some(dir) = &flags.out {
        write_json(dir, "concentration.json", &r)?;
    }
    Ok(r.passed())
}

fn cmd_mdp(flags: &Flags, config: Option<&Path>) -> Result<bool> {
    let mut cfg = match config {
        Some(p) => MdpDemoConfig::from_toml_str(&read(p)?)?,
        None => MdpDemoConfig::default(),
    };
    set_cf(&mut cfg.estimator.c_f, flags.cf)?;
    cfg.trace |= flags.trace;
    let r = run_mdp_demo(&cfg)?;
    println!("{:>6} {:>10} {:>10} {:>10}", "n", "subopt", "se", "W*");
    for p in &r.points {
        println!("{:>6} {:>10.5} {:>10.5} {:>10.5}", p.n, p.subopt_mean, p.subopt_se, p.optimal_mean);
    }
    println!(
        "{} monotone {}, final ratio {:.4}, path gap {:.2e}",
        status(r.passed()),
        r.monotone,
        r.final_ratio,
        r.path_gap
    );
    if let Some(dir) = &flags.out {
        write_json(dir, "mdp_demo.json", &r.points)?;
        write_table(dir, "mdp_rows", flags.tsv, &r.rows)?;
        if !r.traces.is_empty() {
            write_table(dir, "mdp_traces", flags.tsv, &r.traces)?;
        }
    }
    Ok(r.passed())
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("STRATRLHF_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Config(format!("STRATRLHF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Run { config } => cmd_run(&cli.flags, config),
        Command::Verify => cmd_verify(&cli.flags),
        Command::Conc { config } => cmd_conc(&cli.flags, config.as_deref()),
        Command::MdpDemo { config } => cmd_mdp(&cli.flags, config.as_deref()),
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
