//! Per-labeler reward estimation.
//!
//! The estimator maximizes the ridge-regularized, sample-averaged BT
//! log-likelihood
//!
//! ```text
//! F(theta) = (1/n) sum_j ln sigmoid(y_j <theta, x_j>) - (reg/2) ||theta||^2
//! ```
//!
//! over the ball `||theta|| <= B` by projected gradient ascent with Armijo
//! backtracking. The confidence set is the ellipsoid
//! `||theta - theta_hat||_M <= radius` with `M = Sigma + reg I` and
//! `Sigma = (1/n) sum_j x_j x_j^T`; its tight bounding box is what the
//! aggregation layer works with.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::QuerySet;
use crate::error::{Error, Result};
use crate::linalg::{project_ball, project_ball_mut, quad_norm, spd_inverse};
use crate::preference::{log_sigmoid, sigmoid, Observations};

/// Axis-aligned box `lo <= theta <= hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    #[serde(with = "crate::serde_vec")]
    pub lo: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub hi: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Input("box bounds differ in dimension".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::Input("box requires lo <= hi coordinate-wise".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Degenerate box at a point.
    pub fn point(center: &DVector<f64>) -> Self {
        Self {
            lo: center.clone(),
            hi: center.clone(),
        }
    }

    /// `center +- half_widths`.
    pub fn centered(center: &DVector<f64>, half_widths: &DVector<f64>) -> Self {
        Self {
            lo: center - half_widths,
            hi: center + half_widths,
        }
    }

    /// `[-1, 1]^d`.
    pub fn hyperrectangle(d: usize) -> Self {
        Self {
            lo: DVector::from_element(d, -1.0),
            hi: DVector::from_element(d, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol)
    }
}

/// Ridge weight `(d + ln(1/delta)) / n`.
pub fn default_reg(d: usize, n: usize, delta: f64) -> f64 {
    (d as f64 + (1.0 / delta).ln()) / n as f64
}

/// Label-independent data geometry of one query set.
#[derive(Debug, Clone)]
pub struct QueryGeometry {
    /// Rows are the feature differences `x_j`.
    diffs: DMatrix<f64>,
    cov: DMatrix<f64>,
    /// Upper bound on the largest eigenvalue of `cov`.
    cov_top: f64,
}

impl QueryGeometry {
    pub fn new(queries: &QuerySet) -> Self {
        let n = queries.len();
        let d = queries.dim();
        let diffs = DMatrix::from_fn(n, d, |j, c| queries.queries()[j].diff()[c]);
        let cov = diffs.transpose() * &diffs / n as f64;
        let cov_top = cov.trace();
        Self { diffs, cov, cov_top }
    }

    pub fn n(&self) -> usize {
        self.diffs.nrows()
    }

    pub fn d(&self) -> usize {
        self.diffs.ncols()
    }

    /// `Sigma = (1/n) sum x x^T`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn metric(&self, reg: f64) -> DMatrix<f64> {
        &self.cov + DMatrix::identity(self.d(), self.d()) * reg
    }
}

/// Result of the projected-gradient solve, before covariance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub theta: DVector<f64>,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Solver settings for [`fit_mle`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub bound_b: f64,
    pub reg: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl MleOptions {
    pub fn new(bound_b: f64, reg: f64) -> Self {
        Self {
            bound_b,
            reg,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

struct Objective<'a> {
    geom: &'a QueryGeometry,
    signs: Vec<f64>,
    reg: f64,
}

impl Objective<'_> {
    fn value(&self, theta: &DVector<f64>) -> f64 {
        let margins = &self.geom.diffs * theta;
        let ll: f64 = margins
            .iter()
            .zip(&self.signs)
            .map(|(m, y)| log_sigmoid(y * m))
            .sum();
        ll / self.geom.n() as f64 - 0.5 * self.reg * theta.norm_squared()
    }

    fn value_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let margins = &self.geom.diffs * theta;
        let mut ll = 0.0;
        let weights = DVector::from_iterator(
            margins.len(),
            margins.iter().zip(&self.signs).map(|(m, y)| {
                ll += log_sigmoid(y * m);
                y * sigmoid(-y * m)
            }),
        );
        let n = self.geom.n() as f64;
        let grad = self.geom.diffs.tr_mul(&weights) / n - theta * self.reg;
        (ll / n - 0.5 * self.reg * theta.norm_squared(), grad)
    }

    /// Newton direction `-H^{-1} g`, or `None` if `H` is numerically singular.
    fn newton_direction(&self, theta: &DVector<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let margins = &self.geom.diffs * theta;
        let n = self.geom.n() as f64;
        let w = DVector::from_iterator(
            margins.len(),
            margins.iter().map(|m| {
                let p = sigmoid(*m);
                p * (1.0 - p) / n
            }),
        );
        let d = self.geom.d();
        let mut neg_h = DMatrix::identity(d, d) * self.reg;
        for (j, row) in self.geom.diffs.row_iter().enumerate() {
            neg_h += row.transpose() * row * w[j];
        }
        neg_h.cholesky().map(|c| c.solve(grad))
    }
}

/// Regularized log-likelihood `F(theta)` for the given observations.
pub fn regularized_log_likelihood(obs: Observations<'_>, reg: f64, theta: &DVector<f64>) -> f64 {
    let geom = QueryGeometry::new(obs.queries);
    let signs = obs.signed().map(|(_, y)| y).collect();
    Objective { geom: &geom, signs, reg }.value(theta)
}

/// Projected gradient ascent on `F` starting from `init` (projected first).
pub fn fit_theta(
    geom: &QueryGeometry,
    labels: &[u8],
    opts: &MleOptions,
    init: Option<&DVector<f64>>,
) -> Result<ThetaFit> {
    if labels.is_empty() {
        return Err(Error::Input("cannot fit an empty dataset".into()));
    }
    if labels.len() != geom.n() {
        return Err(Error::Input("label count does not match query count".into()));
    }
    if opts.reg < 0.0 || !opts.reg.is_finite() {
        return Err(Error::Config(format!("ridge weight must be >= 0, got {}", opts.reg)));
    }
    let obj = Objective {
        geom,
        signs: labels.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect(),
        reg: opts.reg,
    };
    let mut theta = match init {
        Some(t) => project_ball(t, opts.bound_b),
        None => DVector::zeros(geom.d()),
    };
    // Any step below 1/lip satisfies the ascent lemma.
    let lip = 0.25 * geom.cov_top + opts.reg;
    let safe_step = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let (mut f, mut grad) = obj.value_and_grad(&theta);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let mut mapped = &theta + &grad;
        project_ball_mut(&mut mapped, opts.bound_b);
        grad_norm = (&mapped - &theta).norm();
        if grad_norm <= opts.tol {
            return Ok(ThetaFit {
                theta,
                converged: true,
                grad_norm,
                iterations: iter,
            });
        }
        // Damped Newton while it stays inside the ball; otherwise a projected
        // gradient step whose sufficient-increase constant (1/2) rules out
        // overshooting the maximizer along the ray.
        let newton = obj
            .newton_direction(&theta, &grad)
            .filter(|p| (&theta + p).norm() <= opts.bound_b);
        let (dir, c, mut step) = match newton {
            Some(p) => (p, 1e-4, 1.0),
            None => (grad.clone(), 0.5, 4.0 * safe_step),
        };
        loop {
            let mut cand = &theta + &dir * step;
            project_ball_mut(&mut cand, opts.bound_b);
            let delta = &cand - &theta;
            let (fc, gc) = obj.value_and_grad(&cand);
            if fc >= f + c * grad.dot(&delta) || step <= 1e-3 * safe_step {
                theta = cand;
                f = fc;
                grad = gc;
                break;
            }
            step *= 0.5;
        }
    }
    Ok(ThetaFit {
        theta,
        converged: false,
        grad_norm,
        iterations: opts.max_iter,
    })
}

/// Fitted BT reward parameter with its data covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta_hat: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub reg: f64,
    pub n: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl MleFit {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    /// `M = Sigma + reg I`.
    pub fn metric(&self) -> DMatrix<f64> {
        &self.cov + DMatrix::identity(self.dim(), self.dim()) * self.reg
    }

    pub fn metric_inverse(&self) -> Result<DMatrix<f64>> {
        spd_inverse(&self.metric())
    }
}

/// Maximum-likelihood fit of one labeler's BT parameter over the B-ball.
pub fn fit_mle(obs: Observations<'_>, bound_b: f64, reg: f64, tol: f64, max_iter: usize) -> Result<MleFit> {
    let opts = MleOptions {
        bound_b,
        reg,
        tol,
        max_iter,
    };
    let geom = QueryGeometry::new(obs.queries);
    let fit = fit_theta(&geom, obs.labels, &opts, None)?;
    Ok(assemble_fit(&geom, &opts, fit))
}

pub fn assemble_fit(geom: &QueryGeometry, opts: &MleOptions, fit: ThetaFit) -> MleFit {
    MleFit {
        theta_hat: fit.theta,
        cov: geom.covariance().clone(),
        reg: opts.reg,
        n: geom.n(),
        converged: fit.converged,
        grad_norm: fit.grad_norm,
        iterations: fit.iterations,
    }
}

/// `gamma = 1 / (2 + e^{-HLB} + e^{HLB})`.
pub fn link_curvature(horizon: usize, bound_l: f64, bound_b: f64) -> f64 {
    let a = horizon as f64 * bound_l * bound_b;
    1.0 / (2.0 + (-a).exp() + a.exp())
}

/// Confidence radius `c_f / gamma * sqrt((d + ln(k/delta)) / n)`.
#[allow(clippy::too_many_arguments)]
pub fn confidence_radius(
    d: usize,
    n: usize,
    k: usize,
    delta: f64,
    bound_b: f64,
    bound_l: f64,
    horizon: usize,
    c_f: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if d == 0 || n == 0 || k == 0 || horizon == 0 {
        return Err(Error::Config("d, n, k and H must be positive".into()));
    }
    if !(bound_b > 0.0 && bound_l > 0.0) || c_f < 0.0 || !c_f.is_finite() {
        return Err(Error::Config("B and L must be positive and c_f >= 0".into()));
    }
    let gamma = link_curvature(horizon, bound_l, bound_b);
    Ok(c_f / gamma * ((d as f64 + (k as f64 / delta).ln()) / n as f64).sqrt())
}

/// Ellipsoidal confidence set around an MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub fit: MleFit,
    pub radius: f64,
    pub delta: f64,
}

impl ConfidenceSet {
    pub fn new(fit: MleFit, radius: f64, delta: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::Input(format!("radius must be >= 0, got {radius}")));
        }
        Ok(Self { fit, radius, delta })
    }

    /// Exact membership `||theta - theta_hat||_M <= radius`.
    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        self.distance(theta) <= self.radius
    }

    pub fn distance(&self, theta: &DVector<f64>) -> f64 {
        quad_norm(&(theta - &self.fit.theta_hat), &self.fit.metric())
    }

    pub fn to_record(&self) -> FitRecord {
        let d = self.fit.dim();
        FitRecord {
            d,
            theta_hat: self.fit.theta_hat.iter().copied().collect(),
            cov: (0..d)
                .flat_map(|r| (0..d).map(move |c| (r, c)))
                .map(|(r, c)| self.fit.cov[(r, c)])
                .collect(),
            reg: self.fit.reg,
            n: self.fit.n,
            radius: self.radius,
            delta: self.delta,
        }
    }

    pub fn from_record(rec: &FitRecord) -> Result<Self> {
        let d = rec.d;
        if rec.theta_hat.len() != d || rec.cov.len() != d * d {
            return Err(Error::Input("fit record has inconsistent dimensions".into()));
        }
        let fit = MleFit {
            theta_hat: DVector::from_vec(rec.theta_hat.clone()),
            cov: DMatrix::from_row_slice(d, d, &rec.cov),
            reg: rec.reg,
            n: rec.n,
            converged: true,
            grad_norm: 0.0,
            iterations: 0,
        };
        Self::new(fit, rec.radius, rec.delta)
    }
}

/// JSON form of a confidence set; `cov` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub d: usize,
    pub theta_hat: Vec<f64>,
    pub cov: Vec<f64>,
    pub reg: f64,
    pub n: usize,
    pub radius: f64,
    pub delta: f64,
}

/// Per-coordinate half-widths `radius * sqrt((M^-1)_jj)` of the bounding box.
pub fn box_half_widths(metric_inverse: &DMatrix<f64>, radius: f64) -> DVector<f64> {
    DVector::from_iterator(
        metric_inverse.nrows(),
        metric_inverse.diagonal().iter().map(|v| radius * v.max(0.0).sqrt()),
    )
}

/// Tight axis-aligned bounding box of the confidence ellipsoid.
pub fn ellipsoid_box(set: &ConfidenceSet) -> Result<BoxBounds> {
    let inv = set.fit.metric_inverse()?;
    Ok(BoxBounds::centered(&set.fit.theta_hat, &box_half_widths(&inv, set.radius)))
}

/// Which policy's occupancy the coverage is measured at.
#[derive(Debug, Clone, PartialEq)]
pub enum CoverageMode {
    /// Maximum over the whole hyperrectangle `[-1, 1]^d`.
    Uniform,
    At(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coverage {
    pub value: f64,
    /// Set when `value` is the eigenvalue bound rather than the exact maximum.
    pub is_bound: bool,
}

/// Largest dimension for which uniform coverage is enumerated exactly.
pub const COVERAGE_ENUMERATION_MAX_DIM: usize = 20;

/// Coverage coefficient `||z||_{M^-1}`, maximized over `[-1,1]^d` in uniform mode.
pub fn coverage_coefficient(mode: &CoverageMode, fit: &MleFit) -> Result<Coverage> {
    match mode {
        CoverageMode::At(z) => {
            if z.len() != fit.dim() {
                return Err(Error::Input("occupancy dimension mismatch".into()));
            }
            Ok(Coverage {
                value: quad_norm(z, &fit.metric_inverse()?),
                is_bound: false,
            })
        }
        CoverageMode::Uniform => uniform_coverage(&fit.metric()),
    }
}

/// `max_{z in [-1,1]^d} ||z||_{M^-1}` for a metric `M`.
pub fn uniform_coverage(metric: &DMatrix<f64>) -> Result<Coverage> {
    let d = metric.nrows();
    if d <= COVERAGE_ENUMERATION_MAX_DIM {
        return Ok(Coverage {
            value: max_vertex_quadratic(&spd_inverse(metric)?).sqrt(),
            is_bound: false,
        });
    }
    let lmin = crate::linalg::min_eigenvalue(metric);
    if lmin <= 0.0 {
        return Err(Error::Numeric("metric is singular".into()));
    }
    Ok(Coverage {
        value: (d as f64).sqrt() / lmin.sqrt(),
        is_bound: true,
    })
}

/// `max_{z in {-1,1}^d} z^T A z` by Gray-code enumeration (`z` and `-z` coincide).
fn max_vertex_quadratic(a: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    if d == 0 {
        return 0.0;
    }
    let mut z = vec![1.0f64; d];
    let mut az: Vec<f64> = (0..d).map(|r| a.row(r).sum()).collect();
    let mut q: f64 = az.iter().sum();
    let mut best = q;
    // Fix z[d-1] = +1 by symmetry; walk the remaining d-1 coordinates.
    let count = 1u64 << (d - 1);
    for step in 1..count {
        let j = step.trailing_zeros() as usize;
        let delta = -2.0 * z[j];
        // q' = q + 2 delta (A z)_j + delta^2 A_jj
        q += 2.0 * delta * az[j] + delta * delta * a[(j, j)];
        for (r, v) in az.iter_mut().enumerate() {
            *v += delta * a[(r, j)];
        }
        z[j] = -z[j];
        best = best.max(q);
    }
    best
}

/// Estimation knobs shared by every algorithm in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(rename = "B")]
    pub bound_b: f64,
    #[serde(rename = "L")]
    pub bound_l: f64,
    pub horizon: usize,
    pub delta: f64,
    pub c_f: f64,
    /// Fixed ridge weight; `(d + ln(1/delta)) / n` when absent.
    pub reg: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bound_b: 1.0,
            bound_l: 1.0,
            horizon: 1,
            delta: 0.1,
            c_f: 0.5,
            reg: None,
            tol: 1e-8,
            max_iter: 5000,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.reg {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("ridge weight must be >= 0, got {r}")));
            }
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tol must be positive and max_iter >= 1".into()));
        }
        self.radius_for(1, 1, 1).map(|_| ())
    }

    pub fn reg_for(&self, d: usize, n: usize) -> f64 {
        self.reg.unwrap_or_else(|| default_reg(d, n, self.delta))
    }

    pub fn mle_options(&self, d: usize, n: usize) -> MleOptions {
        MleOptions {
            bound_b: self.bound_b,
            reg: self.reg_for(d, n),
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn radius_for(&self, d: usize, n: usize, k: usize) -> Result<f64> {
        confidence_radius(d, n, k, self.delta, self.bound_b, self.bound_l, self.horizon, self.c_f)
    }

    /// Fits the MLE and wraps it in its confidence set.
    pub fn confidence_set(&self, obs: Observations<'_>, k: usize) -> Result<ConfidenceSet> {
        let d = obs.queries.dim();
        let n = obs.len();
        let fit = fit_mle(obs, self.bound_b, self.reg_for(d, n), self.tol, self.max_iter)?;
        ConfidenceSet::new(fit, self.radius_for(d, n, k)?, self.delta)
    }
}
