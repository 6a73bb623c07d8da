//! Strategic labelers: expected utility of a misreported parameter and
//! black-box searches for a profitable misreport.
//!
//! A [`ReportOracle`] maps a report `theta~_i` to labeler `i`'s expected
//! utility `E[<theta*_i, z_out>]`. Three oracles are provided:
//!
//! * [`SampledGame`]: Monte Carlo over a fixed pool of label draws. Every
//!   report is evaluated on the same uniforms (common random numbers), and the
//!   other labelers' labels are fixed per replication.
//! * [`ExactGame`]: exact expectation by enumerating all `2^n` label vectors of
//!   the strategic labeler (`n <= 12`), others held at fixed estimates.
//! * [`DirectGame`]: zero-radius limit where every estimate equals the report.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, stream_rng, ProblemInstance, QuerySet};
use crate::error::{Error, Result};
use crate::estimation::EstimatorConfig;
use crate::linalg::project_ball;
use crate::mechanism::{select, ActionSpace, LabelerEstimate, LabelerModel};
use crate::policy::{welfare_report, Algorithm};
use crate::preference::{dataset_from_uniforms, draw_uniforms, label_zero_probs, labels_from_uniforms, LabelerDataset};

/// Largest `n` accepted by [`ExactGame`].
pub const MAX_EXACT_N: usize = 12;

pub trait ReportOracle {
    fn dim(&self) -> usize;

    /// The labeler's true parameter, which is also the truthful report.
    fn truthful_report(&self) -> DVector<f64>;

    /// Number of replications available to [`ReportOracle::utility_on`].
    fn replications(&self) -> usize {
        1
    }

    /// Expected utility over all replications.
    fn utility(&self, report: &DVector<f64>) -> Result<f64>;

    /// Expected utility restricted to a subset of replications. Oracles
    /// without replications ignore the subset.
    fn utility_on(&self, report: &DVector<f64>, _reps: &[usize]) -> Result<f64> {
        self.utility(report)
    }
}

/// Labels and truthful estimates for a pool of replications.
///
/// Replication `r` fixes one uniform vector per labeler. Built once per
/// instance and shared by every attack on it.
#[derive(Debug, Clone)]
pub struct ReplicationPool {
    params: Vec<DVector<f64>>,
    queries: Vec<QuerySet>,
    models: Vec<LabelerModel>,
    uniforms: Vec<Vec<Vec<f64>>>,
    truthful: Vec<Vec<LabelerEstimate>>,
}

impl ReplicationPool {
    /// Draws `reps` replications from the stream `(seed, r)`.
    pub fn new(
        instance: &ProblemInstance,
        queries: &[QuerySet],
        est: &EstimatorConfig,
        reps: usize,
        seed: u64,
    ) -> Result<Self> {
        let models = queries
            .iter()
            .map(|q| LabelerModel::new(q, est, instance.k))
            .collect::<Result<Vec<_>>>()?;
        Self::with_models(instance, queries, models, reps, seed)
    }

    pub fn with_models(
        instance: &ProblemInstance,
        queries: &[QuerySet],
        models: Vec<LabelerModel>,
        reps: usize,
        seed: u64,
    ) -> Result<Self> {
        if reps == 0 {
            return Err(Error::Config("replications must be positive".into()));
        }
        if queries.len() != instance.k || models.len() != instance.k {
            return Err(Error::Input("one query set and model per labeler required".into()));
        }
        let mut uniforms = Vec::with_capacity(reps);
        let mut truthful = Vec::with_capacity(reps);
        for r in 0..reps {
            let mut rng = stream_rng(seed, r as u64);
            let us: Vec<Vec<f64>> = queries.iter().map(|q| draw_uniforms(q.len(), &mut rng)).collect();
            let ests = (0..instance.k)
                .map(|i| {
                    let labels = labels_from_uniforms(&instance.true_params[i], &queries[i], &us[i])?;
                    models[i].estimate(&labels, None)
                })
                .collect::<Result<Vec<_>>>()?;
            uniforms.push(us);
            truthful.push(ests);
        }
        Ok(Self {
            params: instance.true_params.clone(),
            queries: queries.to_vec(),
            models,
            uniforms,
            truthful,
        })
    }

    pub fn len(&self) -> usize {
        self.uniforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uniforms.is_empty()
    }

    pub fn k(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[DVector<f64>] {
        &self.params
    }

    /// Labeler `i`'s dataset in replication `r` when labeling from `report`.
    pub fn dataset(&self, r: usize, i: usize, report: &DVector<f64>) -> Result<LabelerDataset> {
        dataset_from_uniforms(report, &self.queries[i], &self.uniforms[r][i])
    }

    /// Truthful estimates of replication `r`.
    pub fn truthful_estimates(&self, r: usize) -> &[LabelerEstimate] {
        &self.truthful[r]
    }

    /// Estimates of replication `r` after labeler `i` labels from `report`.
    pub fn estimates_with_report(&self, r: usize, i: usize, report: &DVector<f64>) -> Result<Vec<LabelerEstimate>> {
        let labels = labels_from_uniforms(report, &self.queries[i], &self.uniforms[r][i])?;
        let warm = &self.truthful[r][i].theta_hat;
        let mut ests = self.truthful[r].clone();
        ests[i] = self.models[i].estimate(&labels, Some(warm))?;
        Ok(ests)
    }

    /// Chosen occupancy in replication `r` with labeler `i` reporting `report`
    /// (`None` for everyone truthful).
    pub fn outcome(
        &self,
        algorithm: Algorithm,
        space: &ActionSpace,
        r: usize,
        deviation: Option<(usize, &DVector<f64>)>,
    ) -> Result<DVector<f64>> {
        match deviation {
            None => select(algorithm, &self.truthful[r], space),
            Some((i, report)) => select(algorithm, &self.estimates_with_report(r, i, report)?, space),
        }
    }

    /// Mean suboptimality over all replications.
    pub fn mean_subopt(
        &self,
        algorithm: Algorithm,
        space: &ActionSpace,
        deviation: Option<(usize, &DVector<f64>)>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for r in 0..self.len() {
            let z = self.outcome(algorithm, space, r, deviation)?;
            total += welfare_report(&z, &self.params)?.subopt;
        }
        Ok(total / self.len() as f64)
    }
}

/// Monte Carlo utility of one labeler under one algorithm.
#[derive(Debug, Clone, Copy)]
pub struct SampledGame<'a> {
    pub pool: &'a ReplicationPool,
    pub algorithm: Algorithm,
    pub labeler: usize,
    pub space: &'a ActionSpace,
}

impl ReportOracle for SampledGame<'_> {
    fn dim(&self) -> usize {
        self.pool.params[self.labeler].len()
    }

    fn truthful_report(&self) -> DVector<f64> {
        self.pool.params[self.labeler].clone()
    }

    fn replications(&self) -> usize {
        self.pool.len()
    }

    fn utility(&self, report: &DVector<f64>) -> Result<f64> {
        let all: Vec<usize> = (0..self.pool.len()).collect();
        self.utility_on(report, &all)
    }

    fn utility_on(&self, report: &DVector<f64>, reps: &[usize]) -> Result<f64> {
        if reps.is_empty() {
            return Err(Error::Input("no replications selected".into()));
        }
        crate::error::ensure_finite(report.as_slice(), "report")?;
        let theta = &self.pool.params[self.labeler];
        let mut total = 0.0;
        for &r in reps {
            let z = self
                .pool
                .outcome(self.algorithm, self.space, r, Some((self.labeler, report)))
                .map_err(|e| e.context(format!("{} replication {r}", self.algorithm)))?;
            total += theta.dot(&z);
        }
        Ok(total / reps.len() as f64)
    }
}

/// Exact expected utility by enumerating the strategic labeler's labels.
#[derive(Debug, Clone)]
pub struct ExactGame {
    pub algorithm: Algorithm,
    pub true_param: DVector<f64>,
    pub queries: QuerySet,
    pub model: LabelerModel,
    /// Estimates of the other labelers, held fixed.
    pub others: Vec<LabelerEstimate>,
    pub space: ActionSpace,
}

impl ExactGame {
    pub fn new(
        algorithm: Algorithm,
        true_param: DVector<f64>,
        queries: QuerySet,
        est: &EstimatorConfig,
        others: Vec<LabelerEstimate>,
        space: ActionSpace,
    ) -> Result<Self> {
        if queries.len() > MAX_EXACT_N {
            return Err(Error::Capacity(format!(
                "exact enumeration needs n <= {MAX_EXACT_N}, got {}",
                queries.len()
            )));
        }
        let model = LabelerModel::new(&queries, est, others.len() + 1)?;
        Ok(Self {
            algorithm,
            true_param,
            queries,
            model,
            others,
            space,
        })
    }
}

impl ReportOracle for ExactGame {
    fn dim(&self) -> usize {
        self.true_param.len()
    }

    fn truthful_report(&self) -> DVector<f64> {
        self.true_param.clone()
    }

    fn utility(&self, report: &DVector<f64>) -> Result<f64> {
        let p0 = label_zero_probs(report, &self.queries)?;
        let n = p0.len();
        let mut total = 0.0;
        let mut labels = vec![0u8; n];
        let mut ests = self.others.clone();
        ests.push(LabelerEstimate::exact(DVector::zeros(self.dim())));
        for mask in 0u32..(1 << n) {
            let mut prob = 1.0;
            for (j, (l, p)) in labels.iter_mut().zip(&p0).enumerate() {
                *l = (mask >> j & 1) as u8;
                prob *= if *l == 0 { *p } else { 1.0 - *p };
            }
            *ests.last_mut().expect("pushed above") = self.model.estimate(&labels, None)?;
            let z = select(self.algorithm, &ests, &self.space)?;
            total += prob * self.true_param.dot(&z);
        }
        Ok(total)
    }
}

/// Zero-radius game: every estimate equals the corresponding report.
#[derive(Debug, Clone)]
pub struct DirectGame {
    pub algorithm: Algorithm,
    pub true_params: Vec<DVector<f64>>,
    pub labeler: usize,
    pub space: ActionSpace,
}

impl DirectGame {
    /// Chosen occupancy when `labeler` reports `report` and others are truthful.
    pub fn outcome(&self, report: &DVector<f64>) -> Result<DVector<f64>> {
        let mut ests: Vec<LabelerEstimate> = self.true_params.iter().cloned().map(LabelerEstimate::exact).collect();
        ests[self.labeler] = LabelerEstimate::exact(report.clone());
        select(self.algorithm, &ests, &self.space)
    }
}

impl ReportOracle for DirectGame {
    fn dim(&self) -> usize {
        self.true_params[self.labeler].len()
    }

    fn truthful_report(&self) -> DVector<f64> {
        self.true_params[self.labeler].clone()
    }

    fn utility(&self, report: &DVector<f64>) -> Result<f64> {
        Ok(self.true_params[self.labeler].dot(&self.outcome(report)?))
    }
}

/// Monte Carlo estimate of labeler `i`'s utility for `report`, with `reps`
/// fresh replications drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_report<R: Rng + ?Sized>(
    algorithm: Algorithm,
    instance: &ProblemInstance,
    queries: &[QuerySet],
    labeler: usize,
    report: &DVector<f64>,
    est: &EstimatorConfig,
    rng: &mut R,
    reps: usize,
) -> Result<f64> {
    if labeler >= instance.k {
        return Err(Error::Input(format!("labeler {labeler} out of range")));
    }
    let pool = ReplicationPool::new(instance, queries, est, reps, rng.random())?;
    let space = ActionSpace::Hyperrectangle;
    SampledGame {
        pool: &pool,
        algorithm,
        labeler,
        space: &space,
    }
    .utility(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub steps: usize,
    /// Perturbation `c_t = c0 / t^gamma`; `0.1 B` when absent.
    pub c0: Option<f64>,
    /// Step `a_t = a0 / t^alpha`; `0.05 B` when absent.
    pub a0: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    /// Replications per gradient evaluation, drawn from the oracle's pool.
    pub reps: usize,
    /// Evaluate the iterate on the full pool every this many steps.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            c0: None,
            a0: None,
            alpha: 0.602,
            gamma: 0.101,
            reps: 8,
            eval_every: 10,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: Option<f64>| x.is_none_or(|v| v > 0.0 && v.is_finite());
        if self.steps == 0 || self.reps == 0 || self.eval_every == 0 {
            return Err(Error::Config("steps, reps and eval_every must be positive".into()));
        }
        if !positive(self.c0) || !positive(self.a0) || !(self.alpha > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config("SPSA schedules must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub utility: f64,
    pub report_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub truthful_utility: f64,
    pub best_utility: f64,
    pub gain: f64,
    pub best_report: DVector<f64>,
    pub trajectory: Vec<TrajectoryRow>,
}

impl AttackResult {
    fn new(truthful_utility: f64, best: (f64, DVector<f64>), trajectory: Vec<TrajectoryRow>) -> Self {
        Self {
            truthful_utility,
            best_utility: best.0,
            gain: best.0 - truthful_utility,
            best_report: best.1,
            trajectory,
        }
    }

    pub fn write_trajectory_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trajectory {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// SPSA ascent on the labeler's utility over reports in the `bound_b` ball,
/// started from the truthful report.
pub fn spsa_attack(oracle: &dyn ReportOracle, bound_b: f64, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if !(bound_b > 0.0) {
        return Err(Error::Config("B must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5b5a));
    let c0 = cfg.c0.unwrap_or(0.1 * bound_b);
    let a0 = cfg.a0.unwrap_or(0.05 * bound_b);
    let d = oracle.dim();
    let pool = oracle.replications();
    let mut x = project_ball(&oracle.truthful_report(), bound_b);
    let truthful = oracle.utility(&x)?;
    let mut best = (truthful, x.clone());
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let tf = t as f64;
        let c_t = c0 / tf.powf(cfg.gamma);
        let a_t = a0 / tf.powf(cfg.alpha);
        let delta = DVector::from_fn(d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let reps: Vec<usize> = if pool <= cfg.reps {
            (0..pool).collect()
        } else {
            sample(&mut rng, pool, cfg.reps).into_vec()
        };
        let plus = project_ball(&(&x + &delta * c_t), bound_b);
        let minus = project_ball(&(&x - &delta * c_t), bound_b);
        let u_plus = oracle.utility_on(&plus, &reps)?;
        let u_minus = oracle.utility_on(&minus, &reps)?;
        // Rademacher entries are their own inverses.
        let grad = &delta * ((u_plus - u_minus) / (2.0 * c_t));
        x = project_ball(&(&x + grad * a_t), bound_b);
        let mut utility = 0.5 * (u_plus + u_minus);
        if t % cfg.eval_every == 0 || t == cfg.steps {
            utility = oracle.utility(&x)?;
            if utility > best.0 {
                best = (utility, x.clone());
            }
        }
        trajectory.push(TrajectoryRow {
            step: t,
            utility,
            report_norm: x.norm(),
        });
    }
    Ok(AttackResult::new(truthful, best, trajectory))
}

/// Exhaustive search over a regular grid of reports in the `bound_b` ball
/// (`points_per_axis^d` candidates). For piecewise-constant utilities, where
/// finite differences vanish almost everywhere.
pub fn grid_attack(oracle: &dyn ReportOracle, bound_b: f64, points_per_axis: usize) -> Result<AttackResult> {
    let d = oracle.dim();
    let total = (points_per_axis as f64).powi(d as i32);
    if points_per_axis < 2 || total > 1e6 {
        return Err(Error::Capacity(format!(
            "grid of {points_per_axis}^{d} reports is outside [2, 1e6]"
        )));
    }
    let truth = project_ball(&oracle.truthful_report(), bound_b);
    let truthful = oracle.utility(&truth)?;
    let mut best = (truthful, truth);
    let mut trajectory = Vec::new();
    let mut idx = vec![0usize; d];
    let coord = |i: usize| -bound_b + 2.0 * bound_b * i as f64 / (points_per_axis - 1) as f64;
    'outer: loop {
        let report = DVector::from_fn(d, |j, _| coord(idx[j]));
        if report.norm() <= bound_b * (1.0 + 1e-12) {
            let u = oracle.utility(&report)?;
            if u > best.0 {
                best = (u, report.clone());
            }
            trajectory.push(TrajectoryRow {
                step: trajectory.len() + 1,
                utility: u,
                report_norm: report.norm(),
            });
        }
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < points_per_axis {
                continue 'outer;
            }
            idx[j] = 0;
        }
        break;
    }
    Ok(AttackResult::new(truthful, best, trajectory))
}

/// Exhaustive one-dimensional check that, under a zero-radius rule with
/// exact expectations, flipping the sign of the report never pays and
/// exaggerating it never hurts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignDominanceConfig {
    pub algorithm: Algorithm,
    pub instances: usize,
    pub n: usize,
    /// Estimates of the other labelers, drawn uniformly from `[-B, B]`.
    pub others: usize,
    pub grid_points: usize,
    pub bound_b: f64,
    pub seed: u64,
}

impl Default for SignDominanceConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PessimisticMomle,
            instances: 40,
            n: 8,
            others: 2,
            grid_points: 41,
            bound_b: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignDominanceReport {
    pub instances: usize,
    pub reports_checked: usize,
    /// Largest `U(flipped) - U(truthful)`.
    pub max_flip_gain: f64,
    /// Largest drop in utility when moving a same-sign report outward.
    pub max_exaggeration_loss: f64,
}

impl SignDominanceReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_flip_gain <= tol && self.max_exaggeration_loss <= tol
    }
}

pub fn sign_dominance(cfg: &SignDominanceConfig) -> Result<SignDominanceReport> {
    if cfg.instances == 0 || cfg.n == 0 || cfg.grid_points < 2 || !(cfg.bound_b > 0.0) {
        return Err(Error::Config("sign-dominance check needs instances, n > 0 and two grid points".into()));
    }
    let est = EstimatorConfig {
        bound_b: cfg.bound_b,
        c_f: 0.0,
        ..EstimatorConfig::default()
    };
    let b = cfg.bound_b;
    let mut report = SignDominanceReport {
        instances: cfg.instances,
        reports_checked: 0,
        max_flip_gain: f64::NEG_INFINITY,
        max_exaggeration_loss: f64::NEG_INFINITY,
    };
    for t in 0..cfg.instances {
        let mut rng = stream_rng(cfg.seed, t as u64);
        let theta = loop {
            let x: f64 = rng.random_range(-b..b);
            if x.abs() > 1e-3 * b {
                break x;
            }
        };
        let queries = (0..cfg.n)
            .map(|_| crate::env::ComparisonQuery::from_diff(DVector::from_element(1, rng.random_range(-1.0..1.0))))
            .collect();
        let others = (0..cfg.others)
            .map(|_| LabelerEstimate::exact(DVector::from_element(1, rng.random_range(-b..b))))
            .collect();
        let game = ExactGame::new(
            cfg.algorithm,
            DVector::from_element(1, theta),
            QuerySet::new(0, queries)?,
            &est,
            others,
            ActionSpace::Hyperrectangle,
        )?;
        let u = |r: f64| game.utility(&DVector::from_element(1, r));
        let truthful = u(theta)?;
        let step = 2.0 * b / (cfg.grid_points - 1) as f64;
        let grid: Vec<f64> = (0..cfg.grid_points).map(|i| -b + step * i as f64).collect();
        let sign = theta.signum();
        // Same-sign reports ordered by magnitude, starting at the truth.
        let mut outward: Vec<f64> = grid.iter().copied().filter(|r| r * sign >= theta.abs()).collect();
        outward.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let mut prev = truthful;
        for r in outward {
            let ur = u(r)?;
            report.max_exaggeration_loss = report.max_exaggeration_loss.max(prev - ur);
            prev = ur;
            report.reports_checked += 1;
        }
        for &r in grid.iter().filter(|r| **r * sign < 0.0) {
            report.max_flip_gain = report.max_flip_gain.max(u(r)? - truthful);
            report.reports_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_queries, instance_from_config, ComparisonQuery, InstanceConfig};
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn two_labeler_game(algorithm: Algorithm, space: ActionSpace) -> DirectGame {
        DirectGame {
            algorithm,
            true_params: vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            labeler: 0,
            space,
        }
    }

    fn two_actions() -> ActionSpace {
        ActionSpace::Finite(vec![v(&[0.5, 0.5]), v(&[0.75, 0.0])])
    }

    #[test]
    fn misreport_pays_under_pessimistic_sw() {
        let game = two_labeler_game(Algorithm::PessimisticSw, two_actions());
        assert_relative_eq!(game.utility(&v(&[1.0, 0.0])).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(game.utility(&v(&[1.0, -1.0])).unwrap(), 0.75, epsilon = 1e-15);
        let res = grid_attack(&game, 2f64.sqrt(), 41).unwrap();
        assert_relative_eq!(res.gain, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn hyperrectangle_gives_momle_no_channel() {
        let game = two_labeler_game(Algorithm::PessimisticMomle, ActionSpace::Hyperrectangle);
        let res = grid_attack(&game, 2f64.sqrt(), 81).unwrap();
        assert_eq!(res.gain, 0.0);
        assert_eq!(res.trajectory.iter().map(|r| r.utility).fold(f64::MIN, f64::max), 0.0);
    }

    #[test]
    fn spsa_finds_no_gain_without_a_channel() {
        // Everyone agrees in sign on every coordinate: the truthful outcome
        // already gives each labeler their best occupancy.
        let game = DirectGame {
            algorithm: Algorithm::NaiveMle,
            true_params: vec![v(&[0.9, -0.4]), v(&[0.5, -0.5]), v(&[0.7, -0.2])],
            labeler: 1,
            space: ActionSpace::Hyperrectangle,
        };
        let res = spsa_attack(&game, 1.0, &AttackConfig::default()).unwrap();
        assert_eq!(res.gain, 0.0);
        assert_eq!(res.trajectory.len(), 200);
        let mut buf = Vec::new();
        res.write_trajectory_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("step,utility,report_norm\n1,"));
    }

    #[test]
    fn spsa_climbs_a_smooth_utility() {
        struct Quadratic;
        impl ReportOracle for Quadratic {
            fn dim(&self) -> usize {
                3
            }
            fn truthful_report(&self) -> DVector<f64> {
                DVector::zeros(3)
            }
            fn utility(&self, r: &DVector<f64>) -> Result<f64> {
                Ok(-(r - v(&[0.3, -0.2, 0.1])).norm_squared())
            }
        }
        let cfg = AttackConfig {
            a0: Some(0.5),
            ..AttackConfig::default()
        };
        let res = spsa_attack(&Quadratic, 1.0, &cfg).unwrap();
        assert!((&res.best_report - v(&[0.3, -0.2, 0.1])).norm() < 0.05, "{}", res.best_report);
        assert!(res.gain > 0.13);
    }

    #[test]
    fn attack_config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            steps: 0,
            ..AttackConfig::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
        let bad = AttackConfig {
            c0: Some(-1.0),
            ..AttackConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampled_truthful_report_matches_pool_outcome() {
        let inst = instance_from_config(&InstanceConfig::new(4, 3, 40).with_seed(9)).unwrap();
        let qs = generate_queries(&inst, &mut stream_rng(9, 1)).unwrap();
        let est = EstimatorConfig::default();
        let pool = ReplicationPool::new(&inst, &qs, &est, 6, 77).unwrap();
        let space = ActionSpace::Hyperrectangle;
        for alg in Algorithm::ALL {
            let game = SampledGame {
                pool: &pool,
                algorithm: alg,
                labeler: 2,
                space: &space,
            };
            let truthful = game.utility(&inst.true_params[2]).unwrap();
            let mut direct = 0.0;
            for r in 0..pool.len() {
                direct += inst.true_params[2].dot(&pool.outcome(alg, &space, r, None).unwrap());
            }
            assert_relative_eq!(truthful, direct / 6.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn evaluate_report_standard_error_shrinks_with_reps() {
        let inst = instance_from_config(&InstanceConfig::new(3, 3, 20).with_seed(4)).unwrap();
        let qs = generate_queries(&inst, &mut stream_rng(4, 1)).unwrap();
        let est = EstimatorConfig::default();
        let report = inst.true_params[0].clone();
        let spread = |reps: usize| {
            let mut rng = stream_rng(4, 100 + reps as u64);
            let xs: Vec<f64> = (0..100)
                .map(|_| evaluate_report(Algorithm::NaiveMle, &inst, &qs, 0, &report, &est, &mut rng, reps).unwrap())
                .collect();
            let m = xs.iter().sum::<f64>() / 100.0;
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 99.0).sqrt()
        };
        let (s1, s16) = (spread(1), spread(16));
        // Expect a factor of 4; allow Monte Carlo slack.
        assert!(s1 / s16 > 2.5 && s1 / s16 < 6.0, "{s1} {s16}");
    }

    fn exact_1d(algorithm: Algorithm, theta: f64, others: &[f64], xs: &[f64]) -> ExactGame {
        let queries =
            QuerySet::new(0, xs.iter().map(|&x| ComparisonQuery::from_diff(v(&[x]))).collect()).unwrap();
        let est = EstimatorConfig {
            c_f: 0.0,
            ..EstimatorConfig::default()
        };
        ExactGame::new(
            algorithm,
            v(&[theta]),
            queries,
            &est,
            others.iter().map(|&o| LabelerEstimate::exact(v(&[o]))).collect(),
            ActionSpace::Hyperrectangle,
        )
        .unwrap()
    }

    #[test]
    fn exact_game_probabilities_sum_to_one() {
        // Utility of a labeler with theta = 1 under a rule that ignores the
        // data (all others far positive) is exactly 1.
        let g = exact_1d(Algorithm::PessimisticMomle, 1.0, &[5.0, 5.0], &[0.5, -0.3, 0.8, 0.1]);
        assert_relative_eq!(g.utility(&v(&[-1.0])).unwrap(), 1.0, epsilon = 1e-12);
        let too_big = QuerySet::new(0, vec![ComparisonQuery::from_diff(v(&[1.0])); 13]).unwrap();
        assert!(matches!(
            ExactGame::new(
                Algorithm::NaiveMle,
                v(&[1.0]),
                too_big,
                &EstimatorConfig::default(),
                vec![],
                ActionSpace::Hyperrectangle
            ),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn exact_utility_is_monotone_in_the_report() {
        let xs = [0.9, -0.4, 0.7, 0.2, -0.8, 0.5];
        let g = exact_1d(Algorithm::PessimisticMomle, 0.3, &[0.1, -0.05], &xs);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=20 {
            let r = -1.0 + 0.1 * i as f64;
            let u = g.utility(&v(&[r])).unwrap();
            assert!(u >= prev - 1e-9, "r={r}: {u} < {prev}");
            prev = u;
        }
    }
}
