//! Coordinate-wise median aggregation and pessimistic median values.
//!
//! The median confidence set is the set of coordinate-wise medians reachable
//! by picking one parameter from each labeler's confidence set. With
//! box-shaped sets it is itself a box, whose bounds are the medians of the
//! per-labeler bounds, and the pessimistic value of an occupancy `z` is a sum
//! of per-coordinate endpoint choices.
//!
//! For even `k` the lower median (order statistic `ceil(k/2)`) is used
//! throughout.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::estimation::{BoxBounds, ConfidenceSet};
use crate::error::{Error, Result};
use crate::linalg::{project_ball_mut, sign0};

/// Lower median of a non-empty slice (order statistic `ceil(k/2)`).
pub fn lower_median(values: &mut [f64]) -> f64 {
    let idx = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *m
}

/// Coordinate-wise lower median of `k >= 1` vectors.
pub fn coordinate_median(vectors: &[DVector<f64>]) -> Result<DVector<f64>> {
    let d = check_dims(vectors.iter().map(|v| v.len()))?;
    let mut column = vec![0.0; vectors.len()];
    Ok(DVector::from_fn(d, |j, _| {
        for (slot, v) in column.iter_mut().zip(vectors) {
            *slot = v[j];
        }
        lower_median(&mut column)
    }))
}

fn check_dims(mut dims: impl Iterator<Item = usize>) -> Result<usize> {
    let d = dims
        .next()
        .ok_or_else(|| Error::Input("median of an empty collection".into()))?;
    if dims.any(|x| x != d) {
        return Err(Error::Input("vectors differ in dimension".into()));
    }
    Ok(d)
}

/// Box of achievable coordinate-wise medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianBox {
    #[serde(with = "crate::serde_vec")]
    pub m_lo: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub m_hi: DVector<f64>,
    pub k: usize,
}

impl MedianBox {
    pub fn dim(&self) -> usize {
        self.m_lo.len()
    }

    /// A median box built directly from bounds (tests, hand constructions).
    pub fn from_bounds(m_lo: DVector<f64>, m_hi: DVector<f64>, k: usize) -> Result<Self> {
        let b = BoxBounds::new(m_lo, m_hi)?;
        Ok(Self {
            m_lo: b.lo,
            m_hi: b.hi,
            k,
        })
    }

    /// The minimizing vertex of the box for occupancy `z`.
    pub fn worst_case_theta(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| if z[j] >= 0.0 { self.m_lo[j] } else { self.m_hi[j] })
    }
}

/// Per-coordinate median of the lower and of the upper bounds.
pub fn median_interval(boxes: &[BoxBounds]) -> Result<MedianBox> {
    check_dims(boxes.iter().map(BoxBounds::dim))?;
    let lows: Vec<DVector<f64>> = boxes.iter().map(|b| b.lo.clone()).collect();
    let highs: Vec<DVector<f64>> = boxes.iter().map(|b| b.hi.clone()).collect();
    Ok(MedianBox {
        m_lo: coordinate_median(&lows)?,
        m_hi: coordinate_median(&highs)?,
        k: boxes.len(),
    })
}

/// Exact `min <theta, z>` over the box-valued median set.
pub fn pessimistic_value(z: &DVector<f64>, mbox: &MedianBox) -> Result<f64> {
    if z.len() != mbox.dim() {
        return Err(Error::Input("occupancy dimension mismatch".into()));
    }
    if z.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::Input("occupancy must lie in [-1, 1]^d".into()));
    }
    Ok(box_min_linear(z, &mbox.m_lo, &mbox.m_hi))
}

/// `min_{lo <= theta <= hi} <theta, z>` without range checks.
pub(crate) fn box_min_linear(z: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> f64 {
    z.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(zj, (l, h))| if *zj >= 0.0 { zj * l } else { zj * h })
        .sum()
}

/// Settings for [`penalized_median_min`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedConfig {
    pub big_m: f64,
    pub eps: f64,
    /// Smoothing stages of the dual ascent; also the number of outer
    /// alternations in the polish.
    pub max_iter: usize,
    /// Dual steps per stage; also subgradient steps per selection update.
    pub inner_iters: usize,
    /// Stop when the penalized objective improves by less than this.
    pub tol: f64,
    /// Base step `c` of the `c / sqrt(t)` schedule, in whitened units.
    pub step: f64,
}

impl PenalizedConfig {
    /// `M = 2 B L / eps`.
    pub fn auto(bound_b: f64, bound_l: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        Ok(Self {
            big_m: 2.0 * bound_b * bound_l / eps,
            eps,
            max_iter: 50,
            inner_iters: 2000,
            tol: 1e-12,
            step: 0.5,
        })
    }
}

impl Default for PenalizedConfig {
    fn default() -> Self {
        Self::auto(1.0, 1.0, 1e-3).expect("default eps is positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub linear_value: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedSolution {
    pub theta: DVector<f64>,
    pub selections: Vec<DVector<f64>>,
    /// `<theta, z>` at the returned point.
    pub linear_value: f64,
    /// `<theta, z> + M sum_{i,j} |theta_j - theta_{i,j}|`.
    pub objective: f64,
    pub converged: bool,
    /// Dual value: no feasible point has a smaller objective.
    pub lower_bound: f64,
    pub trace: Vec<TraceRow>,
}

impl PenalizedSolution {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whitened parametrisation `theta_i = c_i + r_i R_i^{-1} u_i`, `||u_i|| <= 1`,
/// where `M_i = R_i^T R_i`.
struct Ellipsoid {
    center: DVector<f64>,
    /// `r R^{-1}`: maps the unit ball onto the centred ellipsoid.
    map: DMatrix<f64>,
}

impl Ellipsoid {
    fn new(set: &ConfidenceSet) -> Result<Self> {
        let chol = set
            .fit
            .metric()
            .cholesky()
            .ok_or_else(|| Error::Numeric("confidence metric is not invertible".into()))?;
        // M = L L^T, so R = L^T and R^{-1} = L^{-T}.
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(set.fit.dim(), set.fit.dim()))
            .ok_or_else(|| Error::Numeric("singular Cholesky factor".into()))?;
        Ok(Self {
            center: set.fit.theta_hat.clone(),
            map: l_inv.transpose() * set.radius,
        })
    }

    fn point(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.map * u
    }
}

/// Minimizer over `theta` of `z_j theta + M sum_i |theta - a_i|`, evaluated at
/// the breakpoints (the objective is convex piecewise linear).
fn penalized_coordinate(z_j: f64, big_m: f64, anchors: &[f64]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for &t in anchors {
        let v = z_j * t + big_m * anchors.iter().map(|a| (t - a).abs()).sum::<f64>();
        if v < best.0 || (v == best.0 && (t - best.1) * z_j < 0.0) {
            best = (v, t);
        }
    }
    (best.1, best.0)
}

fn theta_step(z: &DVector<f64>, big_m: f64, selections: &[DVector<f64>]) -> (DVector<f64>, f64) {
    let d = z.len();
    let mut anchors = vec![0.0; selections.len()];
    let mut total = 0.0;
    let theta = DVector::from_fn(d, |j, _| {
        for (a, s) in anchors.iter_mut().zip(selections) {
            *a = s[j];
        }
        let (t, v) = penalized_coordinate(z[j], big_m, &anchors);
        total += v;
        t
    });
    (theta, total)
}

fn dispersion(theta: &DVector<f64>, selections: &[DVector<f64>]) -> f64 {
    selections.iter().map(|s| (theta - s).abs().sum()).sum()
}

struct Solver<'a> {
    z: &'a DVector<f64>,
    cfg: &'a PenalizedConfig,
    ellipsoids: Vec<Ellipsoid>,
    trace: Vec<TraceRow>,
}

/// Current iterate: whitened selections plus the exact `theta` for them.
#[derive(Clone)]
struct Iterate {
    us: Vec<DVector<f64>>,
    selections: Vec<DVector<f64>>,
    theta: DVector<f64>,
    objective: f64,
}

impl Solver<'_> {
    fn iterate(&self, us: Vec<DVector<f64>>) -> Iterate {
        let selections: Vec<DVector<f64>> = self.ellipsoids.iter().zip(&us).map(|(e, u)| e.point(u)).collect();
        let (theta, objective) = theta_step(self.z, self.cfg.big_m, &selections);
        Iterate {
            us,
            selections,
            theta,
            objective,
        }
    }

    fn record(&mut self, it: &Iterate) {
        self.trace.push(TraceRow {
            iter: self.trace.len(),
            objective: it.objective,
            linear_value: it.theta.dot(self.z),
            dispersion: dispersion(&it.theta, &it.selections),
        });
    }

    /// Block coordinate descent: selections for fixed `theta`, then the exact
    /// `theta` for fixed selections.
    fn alternate(&mut self, mut cur: Iterate) -> (Iterate, bool) {
        let d = self.z.len();
        let mut best = cur.clone();
        for _ in 0..self.cfg.max_iter {
            let mut us = cur.us.clone();
            for (e, u_slot) in self.ellipsoids.iter().zip(us.iter_mut()) {
                let mut u = u_slot.clone();
                let mut best_u = (f64::INFINITY, u.clone());
                for t in 1..=self.cfg.inner_iters {
                    let sel = e.point(&u);
                    let value = (&cur.theta - &sel).abs().sum();
                    if value < best_u.0 {
                        best_u = (value, u.clone());
                    }
                    // d/d theta_ij of |theta_j - theta_ij| is -sign(theta_j - theta_ij).
                    let g_theta = DVector::from_fn(d, |j, _| -sign0(cur.theta[j] - sel[j]));
                    let g = e.map.tr_mul(&g_theta);
                    let gn = g.norm();
                    if gn == 0.0 {
                        break;
                    }
                    u -= g * (self.cfg.step / (t as f64).sqrt() / gn);
                    project_ball_mut(&mut u, 1.0);
                }
                *u_slot = best_u.1;
            }
            let next = self.iterate(us);
            self.record(&next);
            let improvement = cur.objective - next.objective;
            cur = next;
            if cur.objective < best.objective {
                best = cur.clone();
            }
            if improvement.abs() <= self.cfg.tol * (1.0 + cur.objective.abs()) {
                return (best, true);
            }
        }
        (best, false)
    }

    /// Accelerated projected ascent on the dual
    ///
    /// ```text
    /// max  sum_i -<lambda_i, c_i> - ||r_i R_i^{-T} lambda_i||
    /// s.t. sum_i lambda_i = -z,  |lambda_ij| <= M
    /// ```
    ///
    /// with the norm smoothed by `mu`, shrinking geometrically. Each dual
    /// point yields selections (support points of the ellipsoids) and hence
    /// a primal iterate; the best primal and best dual values are returned.
    fn dual(&mut self) -> (Iterate, f64) {
        let k = self.ellipsoids.len();
        let d = self.z.len();
        let big_m = self.cfg.big_m;
        let support = |lam: &[DVector<f64>], mu: f64| -> (Vec<DVector<f64>>, f64) {
            let mut us = Vec::with_capacity(k);
            let mut value = 0.0;
            for (e, l) in self.ellipsoids.iter().zip(lam) {
                let w = e.map.tr_mul(l);
                let norm = (w.norm_squared() + mu * mu).sqrt();
                value -= l.dot(&e.center) + norm - mu;
                us.push(if norm > 0.0 { w / norm } else { DVector::zeros(d) });
            }
            (us, value)
        };
        let project = |lam: &mut [DVector<f64>]| {
            for j in 0..d {
                let target = -self.z[j];
                let col: Vec<f64> = lam.iter().map(|l| l[j]).collect();
                let total = |tau: f64| col.iter().map(|y| (y - tau).clamp(-big_m, big_m)).sum::<f64>();
                let spread = col.iter().fold(0.0f64, |a, y| a.max(y.abs())) + big_m + target.abs();
                let (mut lo, mut hi) = (-spread, spread);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if total(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tau = 0.5 * (lo + hi);
                for l in lam.iter_mut() {
                    l[j] = (l[j] - tau).clamp(-big_m, big_m);
                }
            }
        };
        let mut lam: Vec<DVector<f64>> = vec![-self.z / k as f64; k];
        project(&mut lam);
        let mut best = self.iterate(vec![DVector::zeros(d); k]);
        let mut best_dual = f64::NEG_INFINITY;
        let mut stages = Vec::new();
        let scale = self.ellipsoids.iter().map(|e| e.map.norm()).fold(0.0, f64::max) * (1.0 + self.z.norm());
        let mut mu = 0.1 * scale.max(1e-12);
        let mut step = 1.0;
        for _ in 0..self.cfg.max_iter {
            let mut y = lam.clone();
            let mut prev = lam.clone();
            let mut t_acc = 1.0f64;
            for _ in 0..self.cfg.inner_iters {
                let (us, fy) = support(&y, mu);
                // Gradient of the smoothed dual at y is -theta_i(y).
                let grad: Vec<DVector<f64>> = self.ellipsoids.iter().zip(&us).map(|(e, u)| -e.point(u)).collect();
                let mut next;
                loop {
                    next = y.iter().zip(&grad).map(|(l, g)| l + g * step).collect::<Vec<_>>();
                    project(&mut next);
                    let (_, fnext) = support(&next, mu);
                    let mut lin = 0.0;
                    let mut sq = 0.0;
                    for ((n, yy), g) in next.iter().zip(&y).zip(&grad) {
                        let diff = n - yy;
                        lin += diff.dot(g);
                        sq += diff.norm_squared();
                    }
                    if fnext >= fy + lin - sq / (2.0 * step) || step < 1e-300 {
                        break;
                    }
                    step *= 0.5;
                }
                // Restart the momentum when it points against the gradient.
                let against: f64 = grad
                    .iter()
                    .zip(next.iter().zip(&prev))
                    .map(|(g, (n, p))| g.dot(&(n - p)))
                    .sum();
                if against < 0.0 {
                    t_acc = 1.0;
                }
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
                let beta = (t_acc - 1.0) / t_next;
                y = next.iter().zip(&prev).map(|(n, p)| n + (n - p) * beta).collect();
                project(&mut y);
                prev = next;
                t_acc = t_next;
                step *= 1.1;
            }
            lam = prev;
            // Smoothed support points reach interior selections, which exact
            // ones cannot when a multiplier is zero.
            let (us, _) = support(&lam, mu);
            let (_, exact_dual) = support(&lam, 0.0);
            best_dual = best_dual.max(exact_dual);
            let it = self.iterate(us);
            if it.objective < best.objective {
                best = it.clone();
            }
            stages.push(it);
            let gap = best.objective - best_dual;
            if gap <= self.cfg.tol.max(1e-9) * (1.0 + best.objective.abs()) {
                break;
            }
            mu *= 0.2;
        }
        for it in &stages {
            self.record(it);
        }
        (best, best_dual)
    }
}

const GAP_TOL: f64 = 1e-6;

/// Penalized surrogate for the pessimistic median over exact ellipsoids:
///
/// ```text
/// min_{theta, theta_i in C_i}  <theta, z> + M sum_{i,j} |theta_j - theta_{i,j}|
/// ```
///
/// The problem is convex. Its dual is solved first, which supplies the
/// selections and a lower bound; block coordinate descent (an exact
/// per-coordinate `theta` update, then projected subgradient steps on each
/// selection) polishes the result. `converged` means the duality gap closed
/// to 1e-6 relative to the objective. The best iterate is returned.
pub fn penalized_median_min(
    z: &DVector<f64>,
    sets: &[ConfidenceSet],
    cfg: &PenalizedConfig,
) -> Result<PenalizedSolution> {
    let d = check_dims(sets.iter().map(|s| s.fit.dim()))?;
    if z.len() != d {
        return Err(Error::Input("occupancy dimension mismatch".into()));
    }
    if !(cfg.big_m > 0.0) || cfg.max_iter == 0 {
        return Err(Error::Config("penalty weight and iteration count must be positive".into()));
    }
    let mut solver = Solver {
        z,
        cfg,
        ellipsoids: sets.iter().map(Ellipsoid::new).collect::<Result<Vec<_>>>()?,
        trace: Vec::new(),
    };
    let start = solver.iterate(vec![DVector::zeros(d); sets.len()]);
    solver.record(&start);
    let (first, lower) = solver.dual();
    let (polished, _) = solver.alternate(first.clone());
    let best = if polished.objective <= first.objective { polished } else { first };
    let converged = best.objective - lower <= GAP_TOL * (1.0 + best.objective.abs());
    Ok(PenalizedSolution {
        linear_value: best.theta.dot(z),
        theta: best.theta,
        selections: best.selections,
        objective: best.objective,
        converged,
        lower_bound: lower,
        trace: solver.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::stream_rng;
    use crate::estimation::MleFit;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    fn bx(lo: &[f64], hi: &[f64]) -> BoxBounds {
        BoxBounds::new(v(lo), v(hi)).unwrap()
    }

    fn sphere_set(center: &[f64], radius: f64) -> ConfidenceSet {
        let d = center.len();
        ConfidenceSet::new(
            MleFit {
                theta_hat: v(center),
                cov: DMatrix::identity(d, d),
                reg: 0.0,
                n: 1,
                converged: true,
                grad_norm: 0.0,
                iterations: 0,
            },
            radius,
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(coordinate_median(&[v(&[1.0, -2.0])]).unwrap(), v(&[1.0, -2.0]));
        let m = coordinate_median(&[v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[-1.0, -1.0])]).unwrap();
        assert_eq!(m, v(&[0.0, 0.0]));
        // Even k: lower median.
        let m = coordinate_median(&[v(&[1.0]), v(&[4.0]), v(&[2.0]), v(&[3.0])]).unwrap();
        assert_eq!(m, v(&[2.0]));
        assert!(matches!(coordinate_median(&[]), Err(Error::Input(_))));
    }

    #[test]
    fn median_matches_full_sort() {
        let mut rng = stream_rng(5, 5);
        for k in [1usize, 2, 5, 100] {
            let vs: Vec<DVector<f64>> = (0..k)
                .map(|_| DVector::from_fn(7, |_, _| rng.random_range(-3.0..3.0)))
                .collect();
            let m = coordinate_median(&vs).unwrap();
            for j in 0..7 {
                let mut col: Vec<f64> = vs.iter().map(|x| x[j]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let idx = k.div_ceil(2) - 1;
                assert_eq!(m[j], col[idx]);
            }
        }
    }

    #[test]
    fn median_interval_examples() {
        let same = vec![bx(&[0.0, 0.0], &[1.0, 1.0]); 3];
        let mb = median_interval(&same).unwrap();
        assert_eq!(mb.m_lo, v(&[0.0, 0.0]));
        assert_eq!(mb.m_hi, v(&[1.0, 1.0]));
        let mb = median_interval(&[bx(&[0.0], &[1.0]), bx(&[2.0], &[3.0]), bx(&[10.0], &[11.0])]).unwrap();
        assert_eq!((mb.m_lo[0], mb.m_hi[0]), (2.0, 3.0));
    }

    #[test]
    fn median_interval_matches_grid_brute_force() {
        let boxes = [bx(&[0.0], &[4.0]), bx(&[1.0], &[2.0]), bx(&[3.0], &[5.0])];
        let mb = median_interval(&boxes).unwrap();
        let grid = |b: &BoxBounds| -> Vec<f64> {
            (0..50).map(|i| b.lo[0] + (b.hi[0] - b.lo[0]) * i as f64 / 49.0).collect()
        };
        let (g0, g1, g2) = (grid(&boxes[0]), grid(&boxes[1]), grid(&boxes[2]));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for a in &g0 {
            for b in &g1 {
                for c in &g2 {
                    let m = lower_median(&mut [*a, *b, *c]);
                    lo = lo.min(m);
                    hi = hi.max(m);
                }
            }
        }
        assert_eq!((mb.m_lo[0], mb.m_hi[0]), (1.0, 4.0));
        assert_relative_eq!(lo, 1.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pessimistic_value_examples() {
        let mb = MedianBox::from_bounds(v(&[2.0]), v(&[3.0]), 1).unwrap();
        assert_eq!(pessimistic_value(&v(&[0.0]), &mb).unwrap(), 0.0);
        assert_eq!(pessimistic_value(&v(&[1.0]), &mb).unwrap(), 2.0);
        assert_eq!(pessimistic_value(&v(&[-1.0]), &mb).unwrap(), -3.0);
        assert!(pessimistic_value(&v(&[1.5]), &mb).is_err());
        let mb = MedianBox::from_bounds(v(&[1.0, -3.0]), v(&[2.0, -1.0]), 1).unwrap();
        let z = v(&[1.0, -1.0]);
        let exact = pessimistic_value(&z, &mb).unwrap();
        assert_eq!(exact, 2.0);
        let mut grid_min = f64::INFINITY;
        for a in 0..100 {
            for b in 0..100 {
                let t = v(&[1.0 + a as f64 / 99.0, -3.0 + 2.0 * b as f64 / 99.0]);
                grid_min = grid_min.min(t.dot(&z));
            }
        }
        assert_relative_eq!(exact, grid_min, epsilon = 1e-12);
    }

    #[test]
    fn point_ellipsoids_pin_the_median() {
        let sets = [sphere_set(&[1.0, 0.0], 0.0), sphere_set(&[0.0, 1.0], 0.0), sphere_set(&[-1.0, -1.0], 0.0)];
        let sol = penalized_median_min(&v(&[0.3, -0.7]), &sets, &PenalizedConfig::default()).unwrap();
        assert_eq!(sol.theta, v(&[0.0, 0.0]));
        for (s, set) in sol.selections.iter().zip(&sets) {
            assert_eq!(s, &set.fit.theta_hat);
        }
    }

    #[test]
    fn penalized_interval_example_tracks_dispersion() {
        // Intervals [0,4], [1,2], [3,5] as spheres in d = 1, z = 1. The
        // surrogate trades the linear term against L1 dispersion: for M < 1/2
        // the optimum sits at theta = 0, and for M > 1 the dispersion term
        // forces theta into [2,3] with linear value 2.
        let sets = [sphere_set(&[2.0], 2.0), sphere_set(&[1.5], 0.5), sphere_set(&[4.0], 1.0)];
        let z = v(&[1.0]);
        let mut cfg = PenalizedConfig::default();
        cfg.big_m = 0.4;
        let sol = penalized_median_min(&z, &sets, &cfg).unwrap();
        assert!((sol.linear_value - 0.0).abs() < 1e-2, "{}", sol.linear_value);
        for big_m in [2.0, 2000.0] {
            cfg.big_m = big_m;
            let sol = penalized_median_min(&z, &sets, &cfg).unwrap();
            assert!((sol.linear_value - 2.0).abs() < 1e-2, "M={big_m}: {}", sol.linear_value);
            assert!((sol.objective - (2.0 + big_m)).abs() < 1e-2 * big_m.max(1.0));
        }
        let mb = median_interval(
            &sets.iter().map(|s| crate::estimation::ellipsoid_box(s).unwrap()).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(pessimistic_value(&z, &mb).unwrap(), 1.0);
    }

    #[test]
    fn single_ellipsoid_matches_closed_form() {
        // min <theta, z> over one ellipsoid is <c, z> - r ||z||_{M^-1}.
        let mut rng = stream_rng(8, 1);
        for _ in 0..10 {
            let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
            let mut set = sphere_set(&[0.2, -0.1, 0.4], rng.random_range(0.01..0.3));
            set.fit.cov = &a * a.transpose() + DMatrix::identity(3, 3) * 0.3;
            let z = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let m_inv = set.fit.metric_inverse().unwrap();
            let exact = set.fit.theta_hat.dot(&z) - set.radius * z.dot(&(&m_inv * &z)).sqrt();
            let sol = penalized_median_min(&z, std::slice::from_ref(&set), &PenalizedConfig::default()).unwrap();
            assert_relative_eq!(sol.linear_value, exact, epsilon = 1e-7);
            assert!(sol.converged);
        }
    }

    #[test]
    fn duality_gap_closes_on_random_instances() {
        let mut rng = stream_rng(8, 2);
        for _ in 0..10 {
            let sets: Vec<ConfidenceSet> = (0..3)
                .map(|_| {
                    let c: Vec<f64> = (0..2).map(|_| rng.random_range(-0.8..0.8)).collect();
                    sphere_set(&c, rng.random_range(0.05..0.3))
                })
                .collect();
            let z = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            let sol = penalized_median_min(&z, &sets, &PenalizedConfig::default()).unwrap();
            assert!(sol.lower_bound <= sol.objective + 1e-6);
            assert!(sol.converged, "gap {}", sol.objective - sol.lower_bound);
            for (s, set) in sol.selections.iter().zip(&sets) {
                assert!(set.distance(s) <= set.radius * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn trace_is_dumpable() {
        let sets = [sphere_set(&[0.1, 0.2], 0.01), sphere_set(&[0.0, -0.3], 0.01), sphere_set(&[0.4, 0.1], 0.01)];
        let sol = penalized_median_min(&v(&[1.0, 1.0]), &sets, &PenalizedConfig::default()).unwrap();
        let mut buf = Vec::new();
        sol.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,objective,linear_value,dispersion"));
        assert_eq!(text.lines().count(), sol.trace.len() + 1);
    }

    proptest! {
        #[test]
        fn enlarging_a_box_never_raises_the_pessimistic_value(
            seed in 0u64..10_000,
            labeler in 0usize..3,
            grow in 0.0f64..1.0,
        ) {
            let mut rng = stream_rng(seed, 0);
            let boxes: Vec<BoxBounds> = (0..3).map(|_| {
                let c = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let w = DVector::from_fn(3, |_, _| rng.random_range(0.0..0.5));
                BoxBounds::centered(&c, &w)
            }).collect();
            let z = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let base = pessimistic_value(&z, &median_interval(&boxes).unwrap()).unwrap();
            let mut bigger = boxes.clone();
            bigger[labeler].lo.add_scalar_mut(-grow);
            bigger[labeler].hi.add_scalar_mut(grow);
            let after = pessimistic_value(&z, &median_interval(&bigger).unwrap()).unwrap();
            prop_assert!(after <= base + 1e-12);
        }

        #[test]
        fn same_side_replacement_keeps_the_median_interval(
            seed in 0u64..10_000,
            shift in 0.01f64..3.0,
        ) {
            // One coordinate, k = 5. If a labeler's box lies entirely above the
            // median interval, replacing it by any other box also entirely above
            // leaves the interval unchanged (symmetrically below).
            let mut rng = stream_rng(seed, 1);
            let boxes: Vec<BoxBounds> = (0..5).map(|_| {
                let c = rng.random_range(-1.0..1.0);
                let w = rng.random_range(0.0..0.5);
                bx(&[c - w], &[c + w])
            }).collect();
            let mb = median_interval(&boxes).unwrap();
            for (i, b) in boxes.iter().enumerate() {
                let mut replaced = boxes.clone();
                let width = rng.random_range(0.0..1.0);
                if b.lo[0] > mb.m_hi[0] {
                    replaced[i] = bx(&[mb.m_hi[0] + shift], &[mb.m_hi[0] + shift + width]);
                } else if b.hi[0] < mb.m_lo[0] {
                    replaced[i] = bx(&[mb.m_lo[0] - shift - width], &[mb.m_lo[0] - shift]);
                } else {
                    continue;
                }
                prop_assert_eq!(&median_interval(&replaced).unwrap(), &mb);
            }
        }
    }
}
