//! Experiment harnesses behind the command-line tool.

pub mod concentration;
pub mod experiment;
pub mod gain_scaling;
pub mod mdp_demo;
pub mod verify;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutput, Regime, ResultRow, Summary};
pub use concentration::{concentration_suite, ConcentrationConfig, ConcentrationReport};
pub use mdp_demo::{run_mdp_demo, MdpDemoConfig, MdpDemoReport};
pub use verify::{verify_counterexamples, VerifyReport};
pub use gain_scaling::{gain_scaling, GainScalingConfig, GainScalingReport, GainScalingRow};
