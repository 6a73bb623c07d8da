//! A random three-state MDP: occupancy measures of two policies, then the
//! pessimistic median policy for a fixed box, found both by enumerating
//! deterministic policies and by projected supergradient ascent.
//!
//! ```text
//! cargo run --release --example tabular_mdp
//! ```

use nalgebra::DVector;
use stratrlhf::aggregation::median_interval;
use stratrlhf::env::stream_rng;
use stratrlhf::estimation::BoxBounds;
use stratrlhf::mdp::{occupancy, optimize_mdp_pessimistic_median, random_mdp, MarkovPolicy, MdpSolveOptions};

fn main() -> stratrlhf::Result<()> {
    let mut rng = stream_rng(3, 0);
    let mdp = random_mdp(3, 2, 3, 2, 1.0, false, &mut rng)?;

    let uniform = occupancy(&mdp, &MarkovPolicy::uniform(&mdp))?;
    let always_first = occupancy(&mdp, &MarkovPolicy::deterministic(&vec![vec![0; 3]; 3], 2))?;
    println!("uniform policy features       {:?}", uniform.feat.as_slice());
    println!("always-action-0 features      {:?}", always_first.feat.as_slice());
    println!("flow violation (uniform)      {:.2e}", uniform.flow_violation(&mdp));

    // Three labelers' boxes; the median box is what the solver sees.
    let boxes = [
        BoxBounds::new(DVector::from_vec(vec![0.2, -0.6]), DVector::from_vec(vec![0.6, -0.2]))?,
        BoxBounds::new(DVector::from_vec(vec![0.1, -0.1]), DVector::from_vec(vec![0.5, 0.3]))?,
        BoxBounds::new(DVector::from_vec(vec![-0.8, -0.4]), DVector::from_vec(vec![0.9, 0.0]))?,
    ];
    let mbox = median_interval(&boxes)?;
    let sol = optimize_mdp_pessimistic_median(&mdp, &mbox, &MdpSolveOptions::default())?;
    println!("\nchosen by {:?}, pessimistic value {:.6}", sol.path, sol.value);
    if let (Some(e), Some(g)) = (&sol.enumeration, &sol.gradient) {
        println!("enumeration {:.8}  gradient {:.8}  ({} ascent steps)", e.value, g.value, g.trace.len());
    }
    for (h, layer) in sol.policy.probs.iter().enumerate() {
        println!("h={h}: {:?}", layer);
    }
    Ok(())
}
