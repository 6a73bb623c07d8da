//! Policy selection over the hyperrectangle occupancy space, welfare metrics,
//! and the finite-action maxmin baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aggregation::{box_min_linear, MedianBox};
use crate::env::ProblemInstance;
use crate::error::{Error, Result};
use crate::estimation::BoxBounds;
use crate::linalg::sign0;

/// The four aggregation rules compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    NaiveMle,
    PessimisticSw,
    MedianMle,
    PessimisticMomle,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::NaiveMle,
        Algorithm::PessimisticSw,
        Algorithm::MedianMle,
        Algorithm::PessimisticMomle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NaiveMle => "naive_mle",
            Algorithm::PessimisticSw => "pessimistic_sw",
            Algorithm::MedianMle => "median_mle",
            Algorithm::PessimisticMomle => "pessimistic_momle",
        }
    }

    /// Whether the rule uses confidence sets rather than point estimates.
    pub fn is_pessimistic(self) -> bool {
        matches!(self, Algorithm::PessimisticSw | Algorithm::PessimisticMomle)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// A bandit policy, represented by its feature occupancy `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    #[serde(with = "crate::serde_vec")]
    pub z: DVector<f64>,
    pub provenance: String,
}

impl Policy {
    pub fn new(z: DVector<f64>, provenance: impl Into<String>) -> Result<Self> {
        if z.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Input("occupancy must lie in [-1, 1]^d".into()));
        }
        Ok(Self {
            z,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// `z_j = sign(theta_j)`, with `z_j = 0` at ties.
pub fn optimize_linear(theta: &DVector<f64>) -> Policy {
    Policy {
        z: theta.map(sign0),
        provenance: "linear".into(),
    }
}

/// Sign rule on an interval: `+1` if it lies strictly above zero, `-1` if
/// strictly below, `0` if it touches or straddles zero.
pub(crate) fn interval_sign(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        1.0
    } else if hi < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn interval_policy(lo: &DVector<f64>, hi: &DVector<f64>, provenance: &str) -> Policy {
    Policy {
        z: lo.zip_map(hi, interval_sign),
        provenance: provenance.into(),
    }
}

/// Maximizer of the pessimistic median value over the hyperrectangle.
pub fn optimize_pessimistic_median(mbox: &MedianBox) -> Policy {
    interval_policy(&mbox.m_lo, &mbox.m_hi, "pessimistic_median")
}

/// Pessimism over the product of boxes with the average aggregator: the
/// average set is `[mean lo, mean hi]` coordinate-wise.
pub fn optimize_pessimistic_average(boxes: &[BoxBounds]) -> Result<Policy> {
    let (lo, hi) = average_box(boxes)?;
    Ok(interval_policy(&lo, &hi, "pessimistic_average"))
}

pub(crate) fn average_box(boxes: &[BoxBounds]) -> Result<(DVector<f64>, DVector<f64>)> {
    let first = boxes
        .first()
        .ok_or_else(|| Error::Input("no boxes to average".into()))?;
    let d = first.dim();
    let mut lo = DVector::zeros(d);
    let mut hi = DVector::zeros(d);
    for b in boxes {
        if b.dim() != d {
            return Err(Error::Input("boxes differ in dimension".into()));
        }
        lo += &b.lo;
        hi += &b.hi;
    }
    let k = boxes.len() as f64;
    Ok((lo / k, hi / k))
}

/// `min <theta, z>` over the average of the product of boxes.
pub fn pessimistic_average_value(z: &DVector<f64>, boxes: &[BoxBounds]) -> Result<f64> {
    let (lo, hi) = average_box(boxes)?;
    if z.len() != lo.len() {
        return Err(Error::Input("occupancy dimension mismatch".into()));
    }
    Ok(box_min_linear(z, &lo, &hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareReport {
    /// Per-labeler utilities `J_i = <theta*_i, z>`.
    pub utilities: Vec<f64>,
    pub welfare: f64,
    pub optimal_welfare: f64,
    pub subopt: f64,
    /// `W / W*`, only when `W* > 0`.
    pub alpha: Option<f64>,
}

/// Welfare of a policy under the instance's true parameters.
pub fn evaluate(policy: &Policy, instance: &ProblemInstance) -> Result<WelfareReport> {
    welfare_report(&policy.z, &instance.true_params)
}

pub fn welfare_report(z: &DVector<f64>, params: &[DVector<f64>]) -> Result<WelfareReport> {
    if params.is_empty() {
        return Err(Error::Input("no labelers".into()));
    }
    if params.iter().any(|p| p.len() != z.len()) {
        return Err(Error::Input(format!(
            "policy has dimension {}, parameters do not",
            z.len()
        )));
    }
    let utilities: Vec<f64> = params.iter().map(|p| p.dot(z)).collect();
    let k = params.len() as f64;
    let welfare = utilities.iter().sum::<f64>() / k;
    let mean = params.iter().fold(DVector::zeros(z.len()), |acc, p| acc + p) / k;
    let optimal_welfare = mean.abs().sum();
    Ok(WelfareReport {
        utilities,
        welfare,
        optimal_welfare,
        subopt: optimal_welfare - welfare,
        alpha: (optimal_welfare > 0.0).then(|| welfare / optimal_welfare),
    })
}

/// Index of the action with the highest `<theta, feat>`; ties go to the
/// lowest index.
pub fn best_action(theta: &DVector<f64>, action_feats: &[DVector<f64>]) -> Result<usize> {
    if action_feats.is_empty() {
        return Err(Error::Input("empty action set".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (a, f) in action_feats.iter().enumerate() {
        let v = theta.dot(f);
        if v > best.0 {
            best = (v, a);
        }
    }
    Ok(best.1)
}

/// Deterministic maxmin: the action maximizing the worst labeler's utility.
pub fn maxmin_action(reported: &[DVector<f64>], action_feats: &[DVector<f64>]) -> Result<usize> {
    let u = utility_table(reported, action_feats)?;
    let mut best = (f64::NEG_INFINITY, 0);
    for a in 0..action_feats.len() {
        let v = u.iter().map(|row| row[a]).fold(f64::INFINITY, f64::min);
        if v > best.0 {
            best = (v, a);
        }
    }
    Ok(best.1)
}

fn utility_table(reported: &[DVector<f64>], action_feats: &[DVector<f64>]) -> Result<Vec<Vec<f64>>> {
    if action_feats.is_empty() {
        return Err(Error::Input("empty action set".into()));
    }
    if reported.is_empty() {
        return Err(Error::Input("no labelers".into()));
    }
    Ok(reported
        .iter()
        .map(|r| action_feats.iter().map(|f| r.dot(f)).collect())
        .collect())
}

fn min_utility(u: &[Vec<f64>], p: &[f64]) -> f64 {
    u.iter()
        .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Distribution over actions maximizing `min_i E_{a~p} <reported_i, feat_a>`.
///
/// Solved by grid search with successive refinement down to 1e-6 on the
/// 1- and 2-simplex; larger action sets use pairwise mass transfers with the
/// same one-dimensional search.
pub fn maxmin_policy(reported: &[DVector<f64>], action_feats: &[DVector<f64>]) -> Result<Vec<f64>> {
    let u = utility_table(reported, action_feats)?;
    let m = action_feats.len();
    match m {
        1 => Ok(vec![1.0]),
        2 => {
            let t = maximize_1d(|t| min_utility(&u, &[t, 1.0 - t]), 0.0, 1.0);
            Ok(vec![t, 1.0 - t])
        }
        3 => Ok(maximize_2simplex(|p| min_utility(&u, p))),
        _ => {
            let start = maxmin_action(reported, action_feats)?;
            let mut p = vec![0.0; m];
            p[start] = 1.0;
            let mut value = min_utility(&u, &p);
            for _sweep in 0..200 {
                let before = value;
                for a in 0..m {
                    for b in 0..m {
                        if a == b {
                            continue;
                        }
                        // Move mass t from b to a.
                        let (pa, pb) = (p[a], p[b]);
                        let eval = |t: f64| {
                            let mut q = p.clone();
                            q[a] = pa + t;
                            q[b] = pb - t;
                            min_utility(&u, &q)
                        };
                        let t = maximize_1d(eval, 0.0, pb);
                        let v = eval(t);
                        if v > value {
                            p[a] = pa + t;
                            p[b] = pb - t;
                            value = v;
                        }
                    }
                }
                if value - before <= 1e-12 {
                    break;
                }
            }
            Ok(p)
        }
    }
}

const GRID: usize = 100;
const RESOLUTION: f64 = 1e-6;

fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut best = (f(lo), lo);
    loop {
        let h = (b - a) / GRID as f64;
        for i in 0..=GRID {
            let t = a + h * i as f64;
            let v = f(t);
            if v > best.0 {
                best = (v, t);
            }
        }
        if h <= RESOLUTION {
            return best.1;
        }
        a = (best.1 - h).max(lo);
        b = (best.1 + h).min(hi);
    }
}

fn maximize_2simplex(f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut center = [0.5, 0.5];
    let mut half = 0.5;
    let mut best = (f(&[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), [1.0 / 3.0, 1.0 / 3.0]);
    loop {
        let h = 2.0 * half / GRID as f64;
        for i in 0..=GRID {
            for j in 0..=GRID {
                let p0 = (center[0] - half + h * i as f64).clamp(0.0, 1.0);
                let p1 = (center[1] - half + h * j as f64).clamp(0.0, 1.0);
                if p0 + p1 > 1.0 {
                    continue;
                }
                let v = f(&[p0, p1, 1.0 - p0 - p1]);
                if v > best.0 {
                    best = (v, [p0, p1]);
                }
            }
        }
        if h <= RESOLUTION {
            let [p0, p1] = best.1;
            return vec![p0, p1, 1.0 - p0 - p1];
        }
        center = best.1;
        half = 2.0 * h;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{median_interval, pessimistic_value};
    use crate::env::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn random_box<R: Rng>(rng: &mut R, d: usize) -> BoxBounds {
        let c = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(d, |_, _| rng.random_range(0.0..0.6));
        BoxBounds::centered(&c, &w)
    }

    fn grid3(steps: usize) -> Vec<DVector<f64>> {
        let t = |i: usize| -1.0 + 2.0 * i as f64 / (steps - 1) as f64;
        let mut out = Vec::new();
        for a in 0..steps {
            for b in 0..steps {
                for c in 0..steps {
                    out.push(v(&[t(a), t(b), t(c)]));
                }
            }
        }
        out
    }

    #[test]
    fn sign_rule() {
        assert_eq!(optimize_linear(&v(&[2.0, -3.0])).z, v(&[1.0, -1.0]));
        assert_eq!(optimize_linear(&v(&[0.0, 0.0])).z, v(&[0.0, 0.0]));
    }

    #[test]
    fn sign_rule_beats_random_probes() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..5 {
            let theta = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
            let best = theta.dot(&optimize_linear(&theta).z);
            for _ in 0..10_000 {
                let z = DVector::from_fn(4, |_, _| rng.random_range(-1.0..=1.0));
                assert!(best >= theta.dot(&z));
            }
        }
    }

    #[test]
    fn pessimistic_median_examples() {
        let mb = MedianBox::from_bounds(v(&[1.0, -3.0]), v(&[2.0, -1.0]), 1).unwrap();
        let p = optimize_pessimistic_median(&mb);
        assert_eq!(p.z, v(&[1.0, -1.0]));
        assert_eq!(pessimistic_value(&p.z, &mb).unwrap(), 2.0);
        let mb = MedianBox::from_bounds(v(&[-1.0, -0.5]), v(&[1.0, 0.0]), 1).unwrap();
        let p = optimize_pessimistic_median(&mb);
        assert_eq!(p.z, v(&[0.0, 0.0]));
        assert_eq!(pessimistic_value(&p.z, &mb).unwrap(), 0.0);
    }

    #[test]
    fn pessimistic_median_matches_grid() {
        let mut rng = stream_rng(12, 0);
        let grid = grid3(21);
        for _ in 0..20 {
            let boxes: Vec<BoxBounds> = (0..3).map(|_| random_box(&mut rng, 3)).collect();
            let mb = median_interval(&boxes).unwrap();
            let got = pessimistic_value(&optimize_pessimistic_median(&mb).z, &mb).unwrap();
            let brute = grid
                .iter()
                .map(|z| pessimistic_value(z, &mb).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(got >= 0.0);
            assert_relative_eq!(got, brute, epsilon = 1e-9);
        }
    }

    #[test]
    fn pessimistic_average_examples() {
        let mut rng = stream_rng(13, 0);
        let b = random_box(&mut rng, 3);
        let single = optimize_pessimistic_average(std::slice::from_ref(&b)).unwrap();
        let mb = median_interval(std::slice::from_ref(&b)).unwrap();
        assert_eq!(single.z, optimize_pessimistic_median(&mb).z);
        let certain = vec![BoxBounds::point(&v(&[1.0, -0.5])); 3];
        assert_eq!(optimize_pessimistic_average(&certain).unwrap().z, v(&[1.0, -1.0]));
    }

    #[test]
    fn pessimistic_average_matches_grid() {
        // Inner oracle: the product-of-boxes average minimised by enumerating
        // each labeler's box vertices.
        let mut rng = stream_rng(14, 0);
        let grid = grid3(11);
        for _ in 0..10 {
            let boxes: Vec<BoxBounds> = (0..2).map(|_| random_box(&mut rng, 3)).collect();
            let vertices = |b: &BoxBounds| -> Vec<DVector<f64>> {
                (0..8u32)
                    .map(|m| DVector::from_fn(3, |j, _| if m >> j & 1 == 1 { b.hi[j] } else { b.lo[j] }))
                    .collect()
            };
            let (v0, v1) = (vertices(&boxes[0]), vertices(&boxes[1]));
            let inner = |z: &DVector<f64>| {
                let mut m = f64::INFINITY;
                for a in &v0 {
                    for b in &v1 {
                        m = m.min(((a + b) / 2.0).dot(z));
                    }
                }
                m
            };
            let brute = grid.iter().map(inner).fold(f64::NEG_INFINITY, f64::max);
            let z = optimize_pessimistic_average(&boxes).unwrap().z;
            assert_relative_eq!(inner(&z), brute, epsilon = 1e-9);
            assert_relative_eq!(pessimistic_average_value(&z, &boxes).unwrap(), inner(&z), epsilon = 1e-12);
        }
    }

    #[test]
    fn welfare_examples() {
        let params = vec![v(&[0.5, -0.2]), v(&[0.1, 0.4])];
        let inst = ProblemInstance::from_params(params.clone(), 10, 1.0, 1.0).unwrap();
        let opt = optimize_linear(&inst.mean_param());
        let r = evaluate(&opt, &inst).unwrap();
        assert_relative_eq!(r.subopt, 0.0, epsilon = 1e-15);
        assert_relative_eq!(r.alpha.unwrap(), 1.0, epsilon = 1e-15);
        let null = evaluate(&Policy::new(v(&[0.0, 0.0]), "null").unwrap(), &inst).unwrap();
        assert_eq!(null.welfare, 0.0);
        assert_relative_eq!(null.subopt, 0.4, epsilon = 1e-15);
        let bad = Policy::new(v(&[1.0]), "short").unwrap();
        assert!(matches!(evaluate(&bad, &inst), Err(Error::Input(_))));
        let zero = welfare_report(&v(&[1.0]), &[v(&[1.0]), v(&[-1.0])]).unwrap();
        assert_eq!(zero.alpha, None);
    }

    #[test]
    fn two_action_welfare() {
        let params = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let a = welfare_report(&v(&[0.5, 0.5]), &params).unwrap();
        let b = welfare_report(&v(&[0.75, 0.0]), &params).unwrap();
        assert_relative_eq!(a.welfare, 0.5, epsilon = 1e-15);
        assert_relative_eq!(b.welfare, 0.375, epsilon = 1e-15);
    }

    #[test]
    fn maxmin_examples() {
        let feats = [v(&[0.5, 0.5]), v(&[0.75, 0.0])];
        let truthful = [v(&[1.0, 0.0]), v(&[0.5, 0.5])];
        let p = maxmin_policy(&truthful, &feats).unwrap();
        assert_relative_eq!(p[0], 1.0, epsilon = 1e-6);
        assert_eq!(maxmin_action(&truthful, &feats).unwrap(), 0);
        let lied = [v(&[1.0, -1.0]), v(&[0.5, 0.5])];
        assert_eq!(maxmin_action(&lied, &feats).unwrap(), 1);
        // The randomized maxmin equalises the two utilities at p(a) = 3/7.
        let p = maxmin_policy(&lied, &feats).unwrap();
        assert!((p[0] - 3.0 / 7.0).abs() < 1e-5, "{p:?}");
        let same = [v(&[0.2, 1.0]), v(&[0.2, 1.0])];
        let three = [v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.5, 0.5])];
        let p = maxmin_policy(&same, &three).unwrap();
        assert!(p[1] > 1.0 - 1e-5);
        assert!(maxmin_policy(&same, &[]).is_err());
    }

    #[test]
    fn maxmin_many_actions_matches_three_action_solver() {
        let reported = [v(&[1.0, -1.0]), v(&[0.5, 0.5])];
        let feats = [v(&[0.5, 0.5]), v(&[0.75, 0.0]), v(&[0.0, 0.1])];
        let p3 = maxmin_policy(&reported, &feats).unwrap();
        let mut padded = feats.to_vec();
        padded.push(v(&[-1.0, -1.0]));
        let p4 = maxmin_policy(&reported, &padded).unwrap();
        let u = utility_table(&reported, &feats).unwrap();
        let u4 = utility_table(&reported, &padded).unwrap();
        assert!((min_utility(&u, &p3) - min_utility(&u4, &p4)).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn argmax_is_scale_invariant(
            seed in 0u64..10_000,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = stream_rng(seed, 2);
            let params: Vec<DVector<f64>> = (0..3)
                .map(|_| DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let mean = params.iter().fold(DVector::zeros(5), |a, p| a + p) / 3.0;
            prop_assert_eq!(optimize_linear(&mean).z, optimize_linear(&(mean * scale)).z);
        }

        #[test]
        fn pessimistic_optimum_dominates_probes(
            seed in 0u64..10_000,
        ) {
            let mut rng = stream_rng(seed, 3);
            let boxes: Vec<BoxBounds> = (0..3).map(|_| random_box(&mut rng, 3)).collect();
            let mb = median_interval(&boxes).unwrap();
            let best = pessimistic_value(&optimize_pessimistic_median(&mb).z, &mb).unwrap();
            prop_assert!(best >= 0.0);
            for _ in 0..200 {
                let z = DVector::from_fn(3, |_, _| rng.random_range(-1.0..=1.0));
                prop_assert!(best >= pessimistic_value(&z, &mb).unwrap() - 1e-12);
            }
        }
    }
}
