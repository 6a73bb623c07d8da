//! End-to-end pipeline from labels to a policy for each algorithm.
//!
//! A [`LabelerModel`] caches everything about one labeler that does not depend
//! on the labels (query geometry, ridge weight, box half-widths), so repeated
//! re-labelling in the strategic loops only pays for the MLE solve.

use nalgebra::DVector;

use crate::aggregation::{box_min_linear, coordinate_median, median_interval};
use crate::env::QuerySet;
use crate::error::{Error, Result};
use crate::estimation::{box_half_widths, fit_theta, BoxBounds, EstimatorConfig, MleOptions, QueryGeometry};
use crate::linalg::spd_inverse;
use crate::policy::{optimize_linear, optimize_pessimistic_average, optimize_pessimistic_median, Algorithm, Policy};
use crate::preference::LabelerDataset;

/// One labeler's point estimate and the bounding box of its confidence set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerEstimate {
    pub theta_hat: DVector<f64>,
    pub bounds: BoxBounds,
    pub converged: bool,
}

impl LabelerEstimate {
    /// An estimate known exactly (zero-radius confidence set).
    pub fn exact(theta: DVector<f64>) -> Self {
        Self {
            bounds: BoxBounds::point(&theta),
            theta_hat: theta,
            converged: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelerModel {
    geom: QueryGeometry,
    opts: MleOptions,
    half_widths: DVector<f64>,
}

impl LabelerModel {
    /// `k` is the number of labelers, which enters the confidence radius.
    pub fn new(queries: &QuerySet, est: &EstimatorConfig, k: usize) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Input("labeler has no queries".into()));
        }
        let geom = QueryGeometry::new(queries);
        let (d, n) = (geom.d(), geom.n());
        let opts = est.mle_options(d, n);
        let radius = est.radius_for(d, n, k)?;
        let half_widths = if radius == 0.0 {
            DVector::zeros(d)
        } else {
            box_half_widths(&spd_inverse(&geom.metric(opts.reg))?, radius)
        };
        Ok(Self {
            geom,
            opts,
            half_widths,
        })
    }

    pub fn geometry(&self) -> &QueryGeometry {
        &self.geom
    }

    pub fn half_widths(&self) -> &DVector<f64> {
        &self.half_widths
    }

    /// Fits the MLE for `labels`, optionally warm-started.
    pub fn estimate(&self, labels: &[u8], warm: Option<&DVector<f64>>) -> Result<LabelerEstimate> {
        let fit = fit_theta(&self.geom, labels, &self.opts, warm)?;
        Ok(LabelerEstimate {
            bounds: BoxBounds::centered(&fit.theta, &self.half_widths),
            theta_hat: fit.theta,
            converged: fit.converged,
        })
    }
}

/// Applies an aggregation rule to per-labeler estimates.
pub fn aggregate(algorithm: Algorithm, estimates: &[LabelerEstimate]) -> Result<Policy> {
    if estimates.is_empty() {
        return Err(Error::Input("no labeler estimates".into()));
    }
    let mut policy = match algorithm {
        Algorithm::NaiveMle => {
            let k = estimates.len() as f64;
            let mean = estimates
                .iter()
                .skip(1)
                .fold(estimates[0].theta_hat.clone(), |acc, e| acc + &e.theta_hat)
                / k;
            optimize_linear(&mean)
        }
        Algorithm::MedianMle => {
            let hats: Vec<DVector<f64>> = estimates.iter().map(|e| e.theta_hat.clone()).collect();
            optimize_linear(&coordinate_median(&hats)?)
        }
        Algorithm::PessimisticSw => {
            let boxes: Vec<BoxBounds> = estimates.iter().map(|e| e.bounds.clone()).collect();
            optimize_pessimistic_average(&boxes)?
        }
        Algorithm::PessimisticMomle => {
            let boxes: Vec<BoxBounds> = estimates.iter().map(|e| e.bounds.clone()).collect();
            optimize_pessimistic_median(&median_interval(&boxes)?)
        }
    };
    policy.provenance = algorithm.name().into();
    Ok(policy)
}

/// Where the learner chooses: the full hyperrectangle of occupancies, or a
/// finite list of action feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Hyperrectangle,
    Finite(Vec<DVector<f64>>),
}

/// The aggregated parameter set `[lo, hi]` a rule is pessimistic over. Point
/// rules return `lo == hi`.
pub fn aggregated_set(algorithm: Algorithm, estimates: &[LabelerEstimate]) -> Result<BoxBounds> {
    if estimates.is_empty() {
        return Err(Error::Input("no labeler estimates".into()));
    }
    let hats = || estimates.iter().map(|e| e.theta_hat.clone()).collect::<Vec<_>>();
    let boxes = || estimates.iter().map(|e| e.bounds.clone()).collect::<Vec<_>>();
    Ok(match algorithm {
        Algorithm::NaiveMle => {
            let h = hats();
            let mean = h.iter().skip(1).fold(h[0].clone(), |acc, x| acc + x) / h.len() as f64;
            BoxBounds::point(&mean)
        }
        Algorithm::MedianMle => BoxBounds::point(&coordinate_median(&hats())?),
        Algorithm::PessimisticSw => {
            let (lo, hi) = crate::policy::average_box(&boxes())?;
            BoxBounds { lo, hi }
        }
        Algorithm::PessimisticMomle => {
            let mb = median_interval(&boxes())?;
            BoxBounds { lo: mb.m_lo, hi: mb.m_hi }
        }
    })
}

/// Chosen occupancy (hyperrectangle) or action feature vector (finite).
/// Finite spaces maximize the pessimistic value over the aggregated set, ties
/// to the lowest index.
pub fn select(algorithm: Algorithm, estimates: &[LabelerEstimate], space: &ActionSpace) -> Result<DVector<f64>> {
    match space {
        ActionSpace::Hyperrectangle => Ok(aggregate(algorithm, estimates)?.z),
        ActionSpace::Finite(actions) => {
            let set = aggregated_set(algorithm, estimates)?;
            Ok(actions[select_action(&set, actions)?].clone())
        }
    }
}

pub fn select_action(set: &BoxBounds, actions: &[DVector<f64>]) -> Result<usize> {
    if actions.is_empty() {
        return Err(Error::Input("empty action set".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (a, feat) in actions.iter().enumerate() {
        if feat.len() != set.dim() {
            return Err(Error::Input("action feature dimension mismatch".into()));
        }
        let v = box_min_linear(feat, &set.lo, &set.hi);
        if v > best.0 {
            best = (v, a);
        }
    }
    Ok(best.1)
}

/// Fits every labeler and aggregates.
pub fn run_algorithm(algorithm: Algorithm, datasets: &[LabelerDataset], est: &EstimatorConfig) -> Result<Policy> {
    let k = datasets.len();
    let estimates = datasets
        .iter()
        .map(|ds| LabelerModel::new(ds.queries(), est, k)?.estimate(ds.labels(), None))
        .collect::<Result<Vec<_>>>()?;
    aggregate(algorithm, &estimates)
}
