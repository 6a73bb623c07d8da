//! Coordinate-wise median against corrupted labelers, and the pessimistic
//! median interval built from per-labeler boxes.
//!
//! ```text
//! cargo run --release --example median_aggregation
//! ```

use nalgebra::DVector;
use stratrlhf::aggregation::{coordinate_median, median_interval, pessimistic_value};
use stratrlhf::estimation::BoxBounds;
use stratrlhf::policy::optimize_pessimistic_median;

fn main() -> stratrlhf::Result<()> {
    let honest = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let mut params: Vec<DVector<f64>> = (0..7).map(|i| &honest + DVector::from_element(3, 0.01 * i as f64)).collect();
    // Three of seven labelers report wildly.
    for p in params.iter_mut().take(3) {
        *p = DVector::from_vec(vec![-50.0, 40.0, -90.0]);
    }
    let mean = params.iter().fold(DVector::zeros(3), |acc, p| acc + p) / params.len() as f64;
    println!("mean   {:?}", mean.as_slice());
    println!("median {:?}", coordinate_median(&params)?.as_slice());

    let boxes: Vec<BoxBounds> = params
        .iter()
        .map(|p| BoxBounds::centered(p, &DVector::from_element(3, 0.1)))
        .collect::<Vec<_>>();
    let mbox = median_interval(&boxes)?;
    println!("\nmedian box lo {:?}", mbox.m_lo.as_slice());
    println!("median box hi {:?}", mbox.m_hi.as_slice());
    let policy = optimize_pessimistic_median(&mbox);
    println!("pessimistic policy z = {:?}", policy.z.as_slice());
    println!("guaranteed value      {:.4}", pessimistic_value(&policy.z, &mbox)?);
    println!("value under honest    {:.4}", honest.dot(&policy.z));
    Ok(())
}
