//! Offline RLHF from strategic labelers.
//!
//! Each of `k` labelers answers pairwise comparison queries through a
//! Bradley-Terry model of their own reward parameter. The crate fits per-labeler
//! maximum likelihood estimates with confidence sets, aggregates them with a
//! coordinate-wise median, and selects a policy that is pessimistic over the
//! median set. The [`strategic`] module lets a labeler misreport and measures
//! what they gain.
//!
//! ```
//! use stratrlhf::env::{instance_from_config, InstanceConfig};
//!
//! let inst = instance_from_config(&InstanceConfig::new(4, 3, 50).with_seed(7)).unwrap();
//! assert_eq!(inst.true_params.len(), 3);
//! ```

pub mod aggregation;
pub mod bench;
pub mod env;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod mdp;
pub mod mechanism;
pub mod policy;
pub mod preference;
mod serde_vec;
pub mod strategic;

pub use error::{Error, Result};
