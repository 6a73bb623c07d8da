use nalgebra::DVector;
use proptest::prelude::*;

use stratrlhf::env::{generate_instance, generate_queries, stream_rng, InstanceConfig, ProblemInstance};
use stratrlhf::estimation::EstimatorConfig;
use stratrlhf::mdp::{occupancy, random_mdp, MarkovPolicy, TabularMdp};
use stratrlhf::mechanism::{run_algorithm, ActionSpace};
use stratrlhf::policy::{evaluate, Algorithm};
use stratrlhf::preference::sample_dataset;
use stratrlhf::strategic::{DirectGame, ReportOracle};

#[test]
fn instance_to_policy_round_trip() {
    let cfg = InstanceConfig::new(3, 3, 100).with_seed(4);
    let inst = generate_instance(&cfg, &mut stream_rng(cfg.seed, 0)).unwrap();
    let back = ProblemInstance::from_json(&inst.to_json().unwrap()).unwrap();
    assert_eq!(back, inst);

    let mut rng = stream_rng(cfg.seed, 1);
    let queries = generate_queries(&inst, &mut rng).unwrap();
    let data: Vec<_> = inst
        .true_params
        .iter()
        .zip(&queries)
        .map(|(t, q)| sample_dataset(t, q, &mut rng).unwrap())
        .collect();
    for algorithm in Algorithm::ALL {
        let p = run_algorithm(algorithm, &data, &EstimatorConfig::default()).unwrap();
        let w = evaluate(&p, &inst).unwrap();
        assert!(w.subopt >= -1e-12 && w.welfare <= w.optimal_welfare + 1e-12);
    }
}

#[test]
fn mdp_json_keeps_occupancies() {
    let mdp = random_mdp(3, 2, 3, 2, 1.0, false, &mut stream_rng(1, 1)).unwrap();
    let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
    let pi = MarkovPolicy::uniform(&mdp);
    assert_eq!(occupancy(&mdp, &pi).unwrap(), occupancy(&back, &pi).unwrap());
}

#[test]
fn naive_mean_rewards_exaggeration() {
    // Labeler 0 prefers +x; the others lean slightly negative on x.
    let params = vec![
        DVector::from_vec(vec![0.3, 0.1]),
        DVector::from_vec(vec![-0.2, 0.1]),
        DVector::from_vec(vec![-0.2, 0.1]),
    ];
    let game = DirectGame {
        algorithm: Algorithm::NaiveMle,
        true_params: params,
        labeler: 0,
        space: ActionSpace::Hyperrectangle,
    };
    let truthful = game.utility(&game.truthful_report()).unwrap();
    let lie = game.utility(&DVector::from_vec(vec![0.99, 0.1])).unwrap();
    assert!(lie > truthful + 0.5, "{truthful} -> {lie}");
}

fn vecs(k: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    // With exact estimates, the coordinate-wise median rule leaves no
    // profitable misreport.
    #[test]
    fn exact_median_rule_is_strategyproof(params in vecs(5, 3), lie in prop::collection::vec(-1.0f64..1.0, 3)) {
        let params: Vec<DVector<f64>> = params.into_iter().map(DVector::from_vec).collect();
        for algorithm in [Algorithm::MedianMle, Algorithm::PessimisticMomle] {
            let game = DirectGame {
                algorithm,
                true_params: params.clone(),
                labeler: 0,
                space: ActionSpace::Hyperrectangle,
            };
            let truthful = game.utility(&game.truthful_report()).unwrap();
            let lied = game.utility(&DVector::from_vec(lie.clone())).unwrap();
            prop_assert!(lied <= truthful + 1e-12, "{algorithm}: {truthful} -> {lied}");
        }
    }
}
