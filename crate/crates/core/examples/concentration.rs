//! How fast the median of noisy estimates concentrates: the upper quantile
//! of `||median - theta||_inf` as the number of labelers grows.
//!
//! ```text
//! cargo run --release --example concentration
//! ```

use stratrlhf::bench::concentration::median_gap_quantile;

fn main() -> stratrlhf::Result<()> {
    let (d, sigma, trials, delta) = (16, 1.0, 2000, 0.1);
    let mut prev: Option<(usize, f64)> = None;
    println!("{:>5} {:>10} {:>12}", "k", "q90 gap", "local slope");
    for k in [5, 25, 125, 625] {
        let q = median_gap_quantile(k, d, sigma, trials, delta, 0)?;
        let slope = prev.map_or(String::from("-"), |(k0, q0)| {
            format!("{:.3}", (q / q0).ln() / (k as f64 / k0 as f64).ln())
        });
        println!("{k:>5} {q:>10.4} {slope:>12}");
        prev = Some((k, q));
    }
    Ok(())
}
