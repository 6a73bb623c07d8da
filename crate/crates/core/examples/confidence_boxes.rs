//! Confidence ellipsoids around the MLE, the axis-aligned boxes that enclose
//! them, and how often each holds the true parameter.
//!
//! ```text
//! cargo run --release --example confidence_boxes
//! ```

use stratrlhf::env::{generate_instance, generate_queries, stream_rng, InstanceConfig};
use stratrlhf::estimation::{ellipsoid_box, EstimatorConfig};
use stratrlhf::preference::sample_dataset;

fn main() -> stratrlhf::Result<()> {
    let (d, n, trials) = (3, 400, 200);
    for c_f in [0.1, 0.25, 0.5] {
        let est = EstimatorConfig {
            c_f,
            ..EstimatorConfig::default()
        };
        let (mut in_set, mut in_box, mut width) = (0, 0, 0.0);
        for t in 0..trials {
            let cfg = InstanceConfig::new(d, 1, n).with_seed(t);
            let mut rng = stream_rng(cfg.seed, 0);
            let inst = generate_instance(&cfg, &mut rng)?;
            let queries = generate_queries(&inst, &mut rng)?;
            let theta = &inst.true_params[0];
            let data = sample_dataset(theta, &queries[0], &mut rng)?;
            let set = est.confidence_set(data.observations(), 1)?;
            let bx = ellipsoid_box(&set)?;
            in_set += usize::from(set.contains(theta));
            in_box += usize::from(bx.contains(theta, 0.0));
            width += (&bx.hi - &bx.lo).mean() / 2.0;
        }
        let t = trials as f64;
        println!(
            "c_f {c_f:<5} ellipsoid coverage {:.3}  box coverage {:.3}  mean half-width {:.3}",
            in_set as f64 / t,
            in_box as f64 / t,
            width / t
        );
    }
    Ok(())
}
