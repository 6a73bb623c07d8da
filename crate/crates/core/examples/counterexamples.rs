//! The hand-built manipulations: a lie that flips pessimistic social welfare
//! and maxmin, and a single deviator who drags welfare down by a factor of
//! about `1 / eps`.
//!
//! ```text
//! cargo run --release --example counterexamples
//! ```

use stratrlhf::bench::verify_counterexamples;

fn main() -> stratrlhf::Result<()> {
    let report = verify_counterexamples()?;
    for c in &report.checks {
        println!("[{}] {}", if c.passed { "ok" } else { "FAILED" }, c.name);
        println!("    expected: {}", c.expected);
        println!("    actual:   {}", c.actual);
    }
    println!("\n{:>8} {:>12} {:>12} {:>10}", "eps", "W*/W", "predicted", "rel err");
    for r in &report.ratios {
        println!("{:>8} {:>12.4} {:>12.4} {:>10.2e}", r.eps, r.ratio, r.predicted, r.rel_err);
    }
    Ok(())
}
