//! Tabular episodic MDPs: occupancy measures, trajectory-pair features, and
//! pessimistic-median policy optimization over the occupancy polytope.
//!
//! Normalization: the feature occupancy is `(1/H) sum_{h,s,a} q_h(s,a) phi(s,a)`,
//! while the trajectory difference `x = sum_h (phi(s_h,a_h) - phi(s'_h,a'_h))`
//! is left unnormalized, as it enters the preference model directly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{pessimistic_value, MedianBox};
use crate::env::{ComparisonQuery, QuerySet};
use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// `P_h(s'|s,a)` is `transitions[h][s][a][s']`; `features[s][a]` is `phi(s,a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rho: Vec<f64>,
    pub features: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(p: &[f64], len: usize, what: &str) -> Result<()> {
    if p.len() != len {
        return Err(Error::Input(format!("{what} has length {}, expected {len}", p.len())));
    }
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::Input(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL * len as f64 {
        return Err(Error::Input(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a, h) = (self.states, self.actions, self.horizon);
        if s == 0 || a == 0 || h == 0 {
            return Err(Error::Input("S, A and H must be positive".into()));
        }
        check_distribution(&self.rho, s, "rho")?;
        if self.transitions.len() != h {
            return Err(Error::Input("need one transition table per step".into()));
        }
        for (hh, table) in self.transitions.iter().enumerate() {
            if table.len() != s || table.iter().any(|row| row.len() != a) {
                return Err(Error::Input(format!("transition table {hh} has the wrong shape")));
            }
            for (ss, row) in table.iter().enumerate() {
                for (aa, p) in row.iter().enumerate() {
                    check_distribution(p, s, &format!("P_{hh}(.|{ss},{aa})"))?;
                }
            }
        }
        let d = self.dim();
        if d == 0
            || self.features.len() != s
            || self
                .features
                .iter()
                .any(|row| row.len() != a || row.iter().any(|f| f.len() != d))
        {
            return Err(Error::Input("feature table must be S x A x d with d > 0".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features
            .first()
            .and_then(|r| r.first())
            .map_or(0, |f| f.len())
    }

    pub fn phi(&self, s: usize, a: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.features[s][a])
    }

    /// Largest feature norm, the `L` of the instance.
    pub fn feature_bound(&self) -> f64 {
        self.features
            .iter()
            .flatten()
            .map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(s)?;
        mdp.validate()?;
        Ok(mdp)
    }

    fn n_vars(&self) -> usize {
        self.horizon * self.states * self.actions
    }

    fn idx(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.states + s) * self.actions + a
    }

    /// `d x HSA` map from flattened occupancies to feature occupancy.
    fn feature_map(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, self.n_vars());
        let inv_h = 1.0 / self.horizon as f64;
        for h in 0..self.horizon {
            for s in 0..self.states {
                for a in 0..self.actions {
                    for j in 0..d {
                        m[(j, self.idx(h, s, a))] = self.features[s][a][j] * inv_h;
                    }
                }
            }
        }
        m
    }

    /// Bellman-flow constraints `C q = b`, one row per `(h, s)`.
    fn flow_constraints(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (s_n, a_n) = (self.states, self.actions);
        let rows = self.horizon * s_n;
        let mut c = DMatrix::zeros(rows, self.n_vars());
        let mut b = DVector::zeros(rows);
        for h in 0..self.horizon {
            for s in 0..s_n {
                let row = h * s_n + s;
                for a in 0..a_n {
                    c[(row, self.idx(h, s, a))] = 1.0;
                }
                if h == 0 {
                    b[row] = self.rho[s];
                } else {
                    for sp in 0..s_n {
                        for ap in 0..a_n {
                            c[(row, self.idx(h - 1, sp, ap))] -= self.transitions[h - 1][sp][ap][s];
                        }
                    }
                }
            }
        }
        (c, b)
    }
}

/// Time-dependent Markov policy: `probs[h][s][a] = pi_h(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl MarkovPolicy {
    pub fn deterministic(actions: &[Vec<usize>], n_actions: usize) -> Self {
        Self {
            probs: actions
                .iter()
                .map(|step| {
                    step.iter()
                        .map(|&a| (0..n_actions).map(|b| if b == a { 1.0 } else { 0.0 }).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let p = 1.0 / mdp.actions as f64;
        Self {
            probs: vec![vec![vec![p; mdp.actions]; mdp.states]; mdp.horizon],
        }
    }

    fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        if self.probs.len() != mdp.horizon || self.probs.iter().any(|t| t.len() != mdp.states) {
            return Err(Error::Input("policy table has the wrong shape".into()));
        }
        for (h, table) in self.probs.iter().enumerate() {
            for (s, row) in table.iter().enumerate() {
                check_distribution(row, mdp.actions, &format!("pi_{h}(.|{s})"))?;
            }
        }
        Ok(())
    }
}

/// State-action occupancies `q_h(s,a)` and the feature occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyMeasure {
    pub q: Vec<Vec<Vec<f64>>>,
    #[serde(with = "crate::serde_vec")]
    pub feat: DVector<f64>,
}

impl OccupancyMeasure {
    fn flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.q.iter().map(|t| t.iter().map(Vec::len).sum::<usize>()).sum(),
            self.q.iter().flatten().flatten().copied(),
        )
    }

    /// Largest violation of the Bellman-flow equalities.
    pub fn flow_violation(&self, mdp: &TabularMdp) -> f64 {
        let (c, b) = mdp.flow_constraints();
        (c * self.flat() - b).amax()
    }

    /// The policy `pi_h(a|s) proportional to q_h(s,a)`, uniform on unreached states.
    pub fn policy(&self) -> MarkovPolicy {
        MarkovPolicy {
            probs: self
                .q
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|row| {
                            let total: f64 = row.iter().sum();
                            if total > 0.0 {
                                row.iter().map(|x| x / total).collect()
                            } else {
                                vec![1.0 / row.len() as f64; row.len()]
                            }
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Exact forward rollout of the occupancies of `policy`.
pub fn occupancy(mdp: &TabularMdp, policy: &MarkovPolicy) -> Result<OccupancyMeasure> {
    policy.validate(mdp)?;
    let (s_n, a_n) = (mdp.states, mdp.actions);
    let mut state = mdp.rho.clone();
    let mut q = Vec::with_capacity(mdp.horizon);
    let mut feat = DVector::zeros(mdp.dim());
    for h in 0..mdp.horizon {
        let table: Vec<Vec<f64>> = (0..s_n)
            .map(|s| (0..a_n).map(|a| state[s] * policy.probs[h][s][a]).collect())
            .collect();
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let w = table[s][a];
                if w == 0.0 {
                    continue;
                }
                for (j, f) in mdp.features[s][a].iter().enumerate() {
                    feat[j] += w * f;
                }
                for (sp, p) in mdp.transitions[h][s][a].iter().enumerate() {
                    next[sp] += w * p;
                }
            }
        }
        q.push(table);
        state = next;
    }
    feat /= mdp.horizon as f64;
    Ok(OccupancyMeasure { q, feat })
}

fn occupancy_from_flat(mdp: &TabularMdp, flat: &DVector<f64>, fmap: &DMatrix<f64>) -> OccupancyMeasure {
    let q = (0..mdp.horizon)
        .map(|h| {
            (0..mdp.states)
                .map(|s| (0..mdp.actions).map(|a| flat[mdp.idx(h, s, a)]).collect())
                .collect()
        })
        .collect();
    OccupancyMeasure { q, feat: fmap * flat }
}

/// A trajectory: the visited `(state, action)` pairs, one per step.
pub type Trajectory = Vec<(usize, usize)>;

/// `x = sum_h (phi(s_h, a_h) - phi(s'_h, a'_h))` for two trajectories from a
/// shared initial state.
pub fn trajectory_features(mdp: &TabularMdp, traj_0: &[(usize, usize)], traj_1: &[(usize, usize)]) -> Result<DVector<f64>> {
    if traj_0.len() != traj_1.len() {
        return Err(Error::Input(format!(
            "trajectory lengths differ ({} vs {})",
            traj_0.len(),
            traj_1.len()
        )));
    }
    if let (Some(a), Some(b)) = (traj_0.first(), traj_1.first()) {
        if a.0 != b.0 {
            return Err(Error::Input("trajectories must share the initial state".into()));
        }
    }
    let mut x = DVector::zeros(mdp.dim());
    for (&(s0, a0), &(s1, a1)) in traj_0.iter().zip(traj_1) {
        if s0 >= mdp.states || s1 >= mdp.states || a0 >= mdp.actions || a1 >= mdp.actions {
            return Err(Error::Input("state or action out of range".into()));
        }
        x += mdp.phi(s0, a0) - mdp.phi(s1, a1);
    }
    Ok(x)
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Rolls out `policy` for `H` steps, from `start` if given, else from `rho`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    start: Option<usize>,
    rng: &mut R,
) -> Trajectory {
    let mut s = start.unwrap_or_else(|| sample_index(&mdp.rho, rng));
    let mut traj = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let a = sample_index(&policy.probs[h][s], rng);
        traj.push((s, a));
        s = sample_index(&mdp.transitions[h][s][a], rng);
    }
    traj
}

/// `n` comparison queries between pairs of `behavior` rollouts sharing an
/// initial state.
pub fn trajectory_queries<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    behavior: &MarkovPolicy,
    labeler: usize,
    n: usize,
    rng: &mut R,
) -> Result<QuerySet> {
    behavior.validate(mdp)?;
    let queries = (0..n)
        .map(|_| {
            let t0 = sample_trajectory(mdp, behavior, None, rng);
            let t1 = sample_trajectory(mdp, behavior, Some(t0[0].0), rng);
            trajectory_features(mdp, &t0, &t1).map(ComparisonQuery::from_diff)
        })
        .collect::<Result<Vec<_>>>()?;
    QuerySet::new(labeler, queries)
}

/// Random instance: Dirichlet(1) transitions and initial distribution,
/// features uniform in `[0, 1]^d` (or `[-1, 1]^d`) scaled so `||phi|| <= L`.
pub fn random_mdp<R: Rng + ?Sized>(
    states: usize,
    actions: usize,
    horizon: usize,
    d: usize,
    bound_l: f64,
    nonnegative: bool,
    rng: &mut R,
) -> Result<TabularMdp> {
    let mut simplex = |len: usize| -> Vec<f64> {
        let e: Vec<f64> = (0..len).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let t: f64 = e.iter().sum();
        e.iter().map(|x| x / t).collect()
    };
    let transitions = (0..horizon)
        .map(|_| (0..states).map(|_| (0..actions).map(|_| simplex(states)).collect()).collect())
        .collect();
    let rho = simplex(states);
    let scale = bound_l / (d as f64).sqrt();
    let features = (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let u: f64 = rng.random();
                            scale * if nonnegative { u } else { 2.0 * u - 1.0 }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mdp = TabularMdp {
        states,
        actions,
        horizon,
        transitions,
        rho,
        features,
    };
    mdp.validate()?;
    Ok(mdp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolvePath {
    Enumeration,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpSolveOptions {
    pub enumerate: bool,
    pub gradient: bool,
    /// Enumeration runs only when `A^(S H)` is at most this.
    pub max_policies: f64,
    pub max_iter: usize,
    /// Dykstra sweeps per projection.
    pub projection_sweeps: usize,
}

impl Default for MdpSolveOptions {
    fn default() -> Self {
        Self {
            enumerate: true,
            gradient: true,
            max_policies: 1e6,
            max_iter: 5000,
            projection_sweeps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub occupancy: OccupancyMeasure,
    pub value: f64,
    /// Accepted values, in order (gradient path only).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    pub policy: MarkovPolicy,
    pub occupancy: OccupancyMeasure,
    pub value: f64,
    pub path: SolvePath,
    pub enumeration: Option<PathResult>,
    pub gradient: Option<PathResult>,
}

/// Maximizes `f(q) = min_{theta in box} <theta, feat(q)>` over occupancies.
///
/// Enumeration over deterministic Markov policies is exact when `f` is linear
/// on the occupancy polytope (e.g. nonnegative features); the projected
/// supergradient path covers stochastic policies. The better result wins.
pub fn optimize_mdp_pessimistic_median(
    mdp: &TabularMdp,
    mbox: &MedianBox,
    opts: &MdpSolveOptions,
) -> Result<MdpSolution> {
    mdp.validate()?;
    if mbox.dim() != mdp.dim() {
        return Err(Error::Input("median box dimension does not match features".into()));
    }
    let count = (mdp.actions as f64).powi((mdp.states * mdp.horizon) as i32);
    let enumeration = if opts.enumerate && count <= opts.max_policies {
        Some(enumerate_policies(mdp, |feat| pessimistic_value(feat, mbox))?)
    } else {
        None
    };
    let gradient = if opts.gradient {
        Some(gradient_path(mdp, mbox, opts)?)
    } else {
        None
    };
    let (path, best) = match (&enumeration, &gradient) {
        (Some(e), Some(g)) if g.value > e.value => (SolvePath::Gradient, g),
        (Some(e), _) => (SolvePath::Enumeration, e),
        (None, Some(g)) => (SolvePath::Gradient, g),
        (None, None) => {
            return Err(Error::Capacity(format!(
                "{count:.3e} deterministic policies and the gradient path is disabled"
            )))
        }
    };
    Ok(MdpSolution {
        policy: best.occupancy.policy(),
        occupancy: best.occupancy.clone(),
        value: best.value,
        path,
        enumeration,
        gradient,
    })
}

/// Best deterministic Markov policy for an arbitrary objective of the
/// feature occupancy.
pub fn enumerate_policies(
    mdp: &TabularMdp,
    objective: impl Fn(&DVector<f64>) -> Result<f64> + Sync,
) -> Result<PathResult> {
    let slots = mdp.states * mdp.horizon;
    let count = (mdp.actions as u64)
        .checked_pow(slots as u32)
        .filter(|c| *c <= 1 << 32)
        .ok_or_else(|| Error::Capacity("too many deterministic policies".into()))?;
    let decode = |mut code: u64| -> Vec<Vec<usize>> {
        (0..mdp.horizon)
            .map(|_| {
                (0..mdp.states)
                    .map(|_| {
                        let a = (code % mdp.actions as u64) as usize;
                        code /= mdp.actions as u64;
                        a
                    })
                    .collect()
            })
            .collect()
    };
    let eval = |code: u64| -> Result<(f64, u64)> {
        let pol = MarkovPolicy::deterministic(&decode(code), mdp.actions);
        Ok((objective(&occupancy(mdp, &pol)?.feat)?, code))
    };
    // Ties go to the lowest code so the result is independent of scheduling.
    let better = |a: (f64, u64), b: (f64, u64)| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };
    let best = (0..count)
        .into_par_iter()
        .map(eval)
        .try_reduce(|| (f64::NEG_INFINITY, u64::MAX), |a, b| Ok(better(a, b)))?;
    let occ = occupancy(mdp, &MarkovPolicy::deterministic(&decode(best.1), mdp.actions))?;
    Ok(PathResult {
        occupancy: occ,
        value: best.0,
        trace: Vec::new(),
    })
}

/// Projection onto `{q >= 0, C q = b}` by Dykstra's alternating projections,
/// followed by a rollout of the induced policy, which makes the result
/// exactly feasible.
struct FlowProjector<'a> {
    mdp: &'a TabularMdp,
    c: DMatrix<f64>,
    b: DVector<f64>,
    gram_inv: DMatrix<f64>,
    fmap: DMatrix<f64>,
    sweeps: usize,
}

impl<'a> FlowProjector<'a> {
    fn new(mdp: &'a TabularMdp, sweeps: usize) -> Result<Self> {
        let (c, b) = mdp.flow_constraints();
        let gram_inv = crate::linalg::spd_inverse(&(&c * c.transpose()))?;
        Ok(Self {
            mdp,
            c,
            b,
            gram_inv,
            fmap: mdp.feature_map(),
            sweeps,
        })
    }

    fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.c * x - &self.b;
        x - self.c.tr_mul(&(&self.gram_inv * r))
    }

    fn project(&self, y: &DVector<f64>) -> Result<OccupancyMeasure> {
        let mut x = y.clone();
        let mut p = DVector::zeros(y.len());
        let mut q = DVector::zeros(y.len());
        for _ in 0..self.sweeps {
            let u = self.affine(&(&x + &p));
            p = &x + &p - &u;
            let next = (&u + &q).map(|v| v.max(0.0));
            q = &u + &q - &next;
            let moved = (&next - &x).amax();
            x = next;
            if moved < 1e-13 {
                break;
            }
        }
        let rough = occupancy_from_flat(self.mdp, &x, &self.fmap);
        occupancy(self.mdp, &rough.policy())
    }
}

fn gradient_path(mdp: &TabularMdp, mbox: &MedianBox, opts: &MdpSolveOptions) -> Result<PathResult> {
    let proj = FlowProjector::new(mdp, opts.projection_sweeps)?;
    let value = |o: &OccupancyMeasure| pessimistic_value(&o.feat, mbox);
    let mut cur = occupancy(mdp, &MarkovPolicy::uniform(mdp))?;
    let mut v = value(&cur)?;
    let mut trace = vec![v];
    let mut step = 1.0;
    for _ in 0..opts.max_iter {
        let theta = mbox.worst_case_theta(&cur.feat);
        let grad = proj.fmap.tr_mul(&theta);
        let cand = proj.project(&(cur.flat() + grad * step))?;
        let vc = value(&cand)?;
        if vc > v {
            cur = cand;
            v = vc;
            trace.push(v);
            step = (step * 2.0).min(1e6);
        } else {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    Ok(PathResult {
        occupancy: cur,
        value: v,
        trace,
    })
}

/// Value of the pessimistic objective's smooth part, `<theta, feat(q)>`,
/// and its gradient in flattened `q` coordinates.
pub fn linear_objective_gradient(mdp: &TabularMdp, theta: &DVector<f64>) -> DVector<f64> {
    mdp.feature_map().tr_mul(theta)
}

/// Flattened `q` (row-major in `h, s, a`).
pub fn flatten(occ: &OccupancyMeasure) -> DVector<f64> {
    occ.flat()
}

/// Feature occupancy of an arbitrary flattened `q`.
pub fn feature_occupancy(mdp: &TabularMdp, flat: &DVector<f64>) -> DVector<f64> {
    mdp.feature_map() * flat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::stream_rng;
    use approx::assert_relative_eq;

    fn chain(d: usize) -> TabularMdp {
        // s -> s+1 regardless of action (last state absorbing), start at 0.
        let (s_n, a_n, h) = (3, 2, 3);
        let transitions = (0..h)
            .map(|_| {
                (0..s_n)
                    .map(|s| {
                        (0..a_n)
                            .map(|_| {
                                let mut p = vec![0.0; s_n];
                                p[(s + 1).min(s_n - 1)] = 1.0;
                                p
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let features = (0..s_n)
            .map(|s| (0..a_n).map(|a| (0..d).map(|j| 0.1 * (s + a + j) as f64).collect()).collect())
            .collect();
        TabularMdp {
            states: s_n,
            actions: a_n,
            horizon: h,
            transitions,
            rho: vec![1.0, 0.0, 0.0],
            features,
        }
    }

    #[test]
    fn validation_catches_bad_rows() {
        let mut m = chain(2);
        assert!(m.validate().is_ok());
        m.transitions[1][0][1][2] = 0.5;
        assert!(m.validate().is_err());
        let mut m = chain(2);
        m.rho = vec![0.5, 0.4, 0.0];
        assert!(m.validate().is_err());
        let json = chain(2).to_json().unwrap();
        assert_eq!(TabularMdp::from_json(&json).unwrap(), chain(2));
    }

    #[test]
    fn one_step_is_the_bandit_case() {
        let mut rng = stream_rng(1, 0);
        let m = random_mdp(3, 2, 1, 2, 1.0, false, &mut rng).unwrap();
        let pol = MarkovPolicy::deterministic(&[vec![1, 0, 1]], 2);
        let occ = occupancy(&m, &pol).unwrap();
        let expect = (0..3).fold(DVector::zeros(2), |acc, s| acc + m.phi(s, [1, 0, 1][s]) * m.rho[s]);
        assert_relative_eq!(occ.feat, expect, epsilon = 1e-15);
    }

    #[test]
    fn chain_occupancy_by_hand() {
        let m = chain(1);
        let pol = MarkovPolicy::deterministic(&[vec![1, 0, 0], vec![0, 0, 0], vec![0, 0, 1]], 2);
        let occ = occupancy(&m, &pol).unwrap();
        assert_eq!(occ.q[0][0][1], 1.0);
        assert_eq!(occ.q[1][1][0], 1.0);
        assert_eq!(occ.q[2][2][1], 1.0);
        // phi(0,1) = 0.1, phi(1,0) = 0.1, phi(2,1) = 0.3
        assert_relative_eq!(occ.feat[0], 0.5 / 3.0, epsilon = 1e-15);
        assert!(occ.flow_violation(&m) < 1e-15);
    }

    #[test]
    fn occupancy_matches_monte_carlo() {
        let mut rng = stream_rng(2, 0);
        let m = random_mdp(3, 2, 3, 2, 1.0, false, &mut rng).unwrap();
        let pol = MarkovPolicy {
            probs: vec![vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]]; 3],
        };
        let exact = occupancy(&m, &pol).unwrap();
        let mut mc = DVector::zeros(2);
        let episodes = 100_000;
        for _ in 0..episodes {
            for (s, a) in sample_trajectory(&m, &pol, None, &mut rng) {
                mc += m.phi(s, a);
            }
        }
        mc /= (episodes * 3) as f64;
        assert!((mc - &exact.feat).norm() < 0.01);
        assert!(exact.flow_violation(&m) < 1e-12);
        let bad = MarkovPolicy {
            probs: vec![vec![vec![0.3, 0.6]; 3]; 3],
        };
        assert!(occupancy(&m, &bad).is_err());
    }

    #[test]
    fn trajectory_differences() {
        let m = chain(2);
        let t = [(0, 1), (1, 0)];
        assert_eq!(trajectory_features(&m, &t, &t).unwrap(), DVector::zeros(2));
        // phi(0,1) + phi(1,0) - phi(0,0) - phi(1,1) = (0.1,0.2) + (0.1,0.2) - (0,0.1) - (0.2,0.3)
        let x = trajectory_features(&m, &[(0, 1), (1, 0)], &[(0, 0), (1, 1)]).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![0.0, 0.0]), epsilon = 1e-15);
        let x = trajectory_features(&m, &[(0, 1), (1, 1)], &[(0, 0), (2, 0)]).unwrap();
        assert_relative_eq!(x, DVector::from_vec(vec![0.1, 0.1]), epsilon = 1e-15);
        let one = trajectory_features(&m, &[(2, 1)], &[(2, 0)]).unwrap();
        assert_relative_eq!(one, m.phi(2, 1) - m.phi(2, 0), epsilon = 1e-15);
        assert!(trajectory_features(&m, &[(0, 0)], &[(0, 0), (1, 0)]).is_err());
        assert!(trajectory_features(&m, &[(0, 0)], &[(1, 0)]).is_err());
    }

    #[test]
    fn one_step_solution_matches_bandit_enumeration() {
        let mut rng = stream_rng(3, 0);
        let m = random_mdp(3, 2, 1, 2, 1.0, false, &mut rng).unwrap();
        let mbox = MedianBox::from_bounds(DVector::from_vec(vec![0.2, -0.5]), DVector::from_vec(vec![0.4, -0.1]), 3).unwrap();
        let sol = optimize_mdp_pessimistic_median(&m, &mbox, &MdpSolveOptions::default()).unwrap();
        // Stochastic policies of a one-step MDP mix per state, so the best is
        // a vertex: pick each state's best action.
        let mut expect = DVector::zeros(2);
        for s in 0..3 {
            let best = (0..2)
                .map(|a| m.phi(s, a))
                .max_by(|x, y| {
                    pessimistic_value(x, &mbox).unwrap().total_cmp(&pessimistic_value(y, &mbox).unwrap())
                })
                .unwrap();
            expect += best * m.rho[s];
        }
        // The objective is linear here (feature signs fixed by the box), so
        // the per-state choice is optimal.
        assert!(sol.value >= pessimistic_value(&expect, &mbox).unwrap() - 1e-9);
        assert!(sol.occupancy.flow_violation(&m) < 1e-12);
    }

    #[test]
    fn gradient_matches_enumeration_on_linear_objective() {
        for seed in 0..5 {
            let mut rng = stream_rng(4, seed);
            let m = random_mdp(2, 2, 2, 2, 1.0, true, &mut rng).unwrap();
            let lo = DVector::from_fn(2, |_, _| rng.random_range(-0.5..0.5));
            let hi = &lo + DVector::from_fn(2, |_, _| rng.random_range(0.0..0.3));
            let mbox = MedianBox::from_bounds(lo, hi, 3).unwrap();
            let sol = optimize_mdp_pessimistic_median(&m, &mbox, &MdpSolveOptions::default()).unwrap();
            let e = sol.enumeration.unwrap().value;
            let g = sol.gradient.as_ref().unwrap().value;
            assert!((e - g).abs() < 1e-4, "seed {seed}: {e} vs {g}");
            let trace = &sol.gradient.unwrap().trace;
            assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn straddling_box_value_is_zero_when_reachable() {
        let mut rng = stream_rng(5, 0);
        let m = random_mdp(3, 2, 2, 2, 1.0, false, &mut rng).unwrap();
        let mbox = MedianBox::from_bounds(DVector::from_vec(vec![-1.0, -1.0]), DVector::from_vec(vec![1.0, 1.0]), 3).unwrap();
        let sol = optimize_mdp_pessimistic_median(&m, &mbox, &MdpSolveOptions::default()).unwrap();
        // The value is -||feat||_1-like and at most 0; the enumeration gives a
        // lower bound and the gradient path cannot do worse than it.
        assert!(sol.value <= 1e-12);
        let e = sol.enumeration.as_ref().unwrap().value;
        assert!(sol.value >= e);
    }

    #[test]
    fn smooth_part_gradient_matches_finite_differences() {
        let mut rng = stream_rng(6, 0);
        let m = random_mdp(3, 2, 3, 2, 1.0, false, &mut rng).unwrap();
        let theta = DVector::from_vec(vec![0.7, -0.3]);
        let grad = linear_objective_gradient(&m, &theta);
        for _ in 0..10 {
            let pol = MarkovPolicy {
                probs: (0..3)
                    .map(|_| {
                        (0..3)
                            .map(|_| {
                                let p: f64 = rng.random();
                                vec![p, 1.0 - p]
                            })
                            .collect()
                    })
                    .collect(),
            };
            let q = flatten(&occupancy(&m, &pol).unwrap());
            let dir = DVector::from_fn(q.len(), |_, _| rng.random_range(-1.0..1.0));
            let h = 1e-6;
            let f = |x: &DVector<f64>| theta.dot(&feature_occupancy(&m, x));
            let fd = (f(&(&q + &dir * h)) - f(&(&q - &dir * h))) / (2.0 * h);
            let an = grad.dot(&dir);
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-8), "{fd} vs {an}");
        }
    }

    #[test]
    fn queries_are_trajectory_differences() {
        let mut rng = stream_rng(7, 0);
        let m = random_mdp(3, 2, 3, 2, 1.0, true, &mut rng).unwrap();
        let qs = trajectory_queries(&m, &MarkovPolicy::uniform(&m), 0, 50, &mut rng).unwrap();
        assert_eq!(qs.len(), 50);
        assert!(qs.queries().iter().all(|q| q.diff().norm() <= 2.0 * 3.0 * m.feature_bound() + 1e-12));
    }
}
