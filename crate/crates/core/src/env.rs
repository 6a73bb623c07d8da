//! Synthetic contextual-bandit instances.
//!
//! An instance fixes the labelers' private reward parameters and the
//! geometry of the offline comparison queries. Contexts are folded into the
//! feature vectors: a query is just a pair of feature vectors in `R^d`, and a
//! policy is identified with its feature occupancy `z` in the hyperrectangle
//! `[-1, 1]^d`.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::project_ball_mut;

/// How query feature vectors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSampler {
    /// Every coordinate uniform on `[-L/sqrt(d), L/sqrt(d)]`.
    #[default]
    Uniform,
    /// Every coordinate `+-L/sqrt(d)` with equal probability.
    Hypercube,
}

/// Parameters of one synthetic experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    #[serde(rename = "B", default = "one")]
    pub bound_b: f64,
    #[serde(rename = "L", default = "one")]
    pub bound_l: f64,
    #[serde(default)]
    pub seed: u64,
    /// Mean of every coordinate of the ground-truth Gaussian.
    #[serde(default)]
    pub gt_mean: f64,
    /// Isotropic standard deviation; `B / sqrt(d)` when absent.
    #[serde(default)]
    pub gt_scale: Option<f64>,
    #[serde(default)]
    pub sampler: FeatureSampler,
}

fn one() -> f64 {
    1.0
}

impl InstanceConfig {
    pub fn new(d: usize, k: usize, n: usize) -> Self {
        Self {
            d,
            k,
            n,
            bound_b: 1.0,
            bound_l: 1.0,
            seed: 0,
            gt_mean: 0.0,
            gt_scale: None,
            sampler: FeatureSampler::Uniform,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn gt_scale(&self) -> f64 {
        self.gt_scale
            .unwrap_or(self.bound_b / (self.d.max(1) as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "d, k and n must be positive (got d={}, k={}, n={})",
                self.d, self.k, self.n
            )));
        }
        if !(self.bound_b > 0.0 && self.bound_b.is_finite()) {
            return Err(Error::Config(format!("B must be positive, got {}", self.bound_b)));
        }
        if !(self.bound_l > 0.0 && self.bound_l.is_finite()) {
            return Err(Error::Config(format!("L must be positive, got {}", self.bound_l)));
        }
        let scale = self.gt_scale();
        if !(scale >= 0.0 && scale.is_finite()) || !self.gt_mean.is_finite() {
            return Err(Error::Config("ground-truth mean/scale must be finite, scale >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Ground truth for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    #[serde(rename = "B")]
    pub bound_b: f64,
    #[serde(rename = "L")]
    pub bound_l: f64,
    #[serde(with = "crate::serde_vec::many")]
    pub true_params: Vec<DVector<f64>>,
    pub sampler: FeatureSampler,
    pub seed: u64,
}

impl ProblemInstance {
    /// Average of the labelers' true parameters; the welfare direction.
    pub fn mean_param(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.d);
        for p in &self.true_params {
            acc += p;
        }
        acc / self.k as f64
    }

    /// The declared occupancy set of bandit policies: `[-1, 1]^d`.
    pub fn policy_space(&self) -> crate::estimation::BoxBounds {
        crate::estimation::BoxBounds::hyperrectangle(self.d)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Builds an instance from explicit parameters (hand-made constructions).
    pub fn from_params(true_params: Vec<DVector<f64>>, n: usize, bound_b: f64, bound_l: f64) -> Result<Self> {
        let d = true_params
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::Input("at least one labeler is required".into()))?;
        if true_params.iter().any(|p| p.len() != d) {
            return Err(Error::Input("true parameters differ in dimension".into()));
        }
        Ok(Self {
            d,
            k: true_params.len(),
            n,
            bound_b,
            bound_l,
            true_params,
            sampler: FeatureSampler::Uniform,
            seed: 0,
        })
    }
}

/// One offline comparison between two alternatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonQuery {
    #[serde(with = "crate::serde_vec")]
    feat_0: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    feat_1: DVector<f64>,
    #[serde(skip)]
    diff: DVector<f64>,
}

impl ComparisonQuery {
    pub fn new(feat_0: DVector<f64>, feat_1: DVector<f64>) -> Result<Self> {
        if feat_0.len() != feat_1.len() {
            return Err(Error::Input("feature vectors differ in dimension".into()));
        }
        let diff = &feat_0 - &feat_1;
        Ok(Self { feat_0, feat_1, diff })
    }

    /// A query whose feature difference is given directly (trajectory pairs).
    pub fn from_diff(diff: DVector<f64>) -> Self {
        let zero = DVector::zeros(diff.len());
        Self {
            feat_0: diff.clone(),
            feat_1: zero,
            diff,
        }
    }

    pub fn feat_0(&self) -> &DVector<f64> {
        &self.feat_0
    }

    pub fn feat_1(&self) -> &DVector<f64> {
        &self.feat_1
    }

    pub fn diff(&self) -> &DVector<f64> {
        &self.diff
    }

    pub fn swapped(&self) -> Self {
        Self {
            feat_0: self.feat_1.clone(),
            feat_1: self.feat_0.clone(),
            diff: -&self.diff,
        }
    }

    pub fn dim(&self) -> usize {
        self.diff.len()
    }

    fn refresh(&mut self) {
        self.diff = &self.feat_0 - &self.feat_1;
    }
}

/// The fixed queries shown to one labeler.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySet {
    pub labeler: usize,
    queries: Vec<ComparisonQuery>,
}

impl<'de> Deserialize<'de> for QuerySet {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            labeler: usize,
            queries: Vec<ComparisonQuery>,
        }
        let mut raw = Raw::deserialize(de)?;
        raw.queries.iter_mut().for_each(ComparisonQuery::refresh);
        Ok(QuerySet {
            labeler: raw.labeler,
            queries: raw.queries,
        })
    }
}

impl QuerySet {
    pub fn new(labeler: usize, queries: Vec<ComparisonQuery>) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Input("a query set needs at least one query".into()));
        }
        let d = queries[0].dim();
        if queries.iter().any(|q| q.dim() != d) {
            return Err(Error::Input("queries differ in dimension".into()));
        }
        Ok(Self { labeler, queries })
    }

    pub fn queries(&self) -> &[ComparisonQuery] {
        &self.queries
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.queries[0].dim()
    }
}

/// Draws the ground-truth parameters: Gaussian, then radially projected to the B-ball.
pub fn generate_instance<R: Rng + ?Sized>(config: &InstanceConfig, rng: &mut R) -> Result<ProblemInstance> {
    config.validate()?;
    let scale = config.gt_scale();
    let true_params = (0..config.k)
        .map(|_| {
            let mut theta = DVector::from_fn(config.d, |_, _| {
                let g: f64 = rng.sample(StandardNormal);
                config.gt_mean + scale * g
            });
            project_ball_mut(&mut theta, config.bound_b);
            theta
        })
        .collect();
    Ok(ProblemInstance {
        d: config.d,
        k: config.k,
        n: config.n,
        bound_b: config.bound_b,
        bound_l: config.bound_l,
        true_params,
        sampler: config.sampler,
        seed: config.seed,
    })
}

/// Seeds a generator from `config.seed` and calls [`generate_instance`].
pub fn instance_from_config(config: &InstanceConfig) -> Result<ProblemInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    generate_instance(config, &mut rng)
}

fn sample_feature<R: Rng + ?Sized>(d: usize, l: f64, sampler: FeatureSampler, rng: &mut R) -> DVector<f64> {
    let half = l / (d as f64).sqrt();
    match sampler {
        FeatureSampler::Uniform => DVector::from_fn(d, |_, _| rng.random_range(-half..=half)),
        FeatureSampler::Hypercube => {
            DVector::from_fn(d, |_, _| if rng.random::<bool>() { half } else { -half })
        }
    }
}

/// Draws `n` independent comparison queries for every labeler.
pub fn generate_queries<R: Rng + ?Sized>(instance: &ProblemInstance, rng: &mut R) -> Result<Vec<QuerySet>> {
    if instance.n == 0 || instance.d == 0 {
        return Err(Error::Config("instance must have positive d and n".into()));
    }
    (0..instance.k)
        .map(|labeler| {
            let queries = (0..instance.n)
                .map(|_| {
                    let f0 = sample_feature(instance.d, instance.bound_l, instance.sampler, rng);
                    let f1 = sample_feature(instance.d, instance.bound_l, instance.sampler, rng);
                    ComparisonQuery::new(f0, f1)
                })
                .collect::<Result<Vec<_>>>()?;
            QuerySet::new(labeler, queries)
        })
        .collect()
}

/// Deterministic stream seed for `(master, index)`; splitmix64 finaliser.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A fresh generator for stream `index` under `master`.
pub fn stream_rng(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}
