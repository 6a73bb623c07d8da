//! Exact checks of the hand-built counterexamples: the two-labeler
//! manipulation of pessimistic social welfare and of maxmin, and the
//! single-deviator construction where welfare collapses to `eps`.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::Result;
use crate::mechanism::{aggregated_set, select_action, LabelerEstimate};
use crate::policy::{maxmin_action, maxmin_policy, welfare_report, Algorithm};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub eps: f64,
    pub ratio: f64,
    pub predicted: f64,
    pub rel_err: f64,
    pub truthful_action: usize,
    pub manipulated_action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub ratios: Vec<RatioRow>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_vec(x.to_vec())
}

/// Action picked by a rule when every estimate is exactly its report.
fn chosen(algorithm: Algorithm, reports: &[DVector<f64>], actions: &[DVector<f64>]) -> Result<usize> {
    let ests: Vec<LabelerEstimate> = reports.iter().cloned().map(LabelerEstimate::exact).collect();
    select_action(&aggregated_set(algorithm, &ests)?, actions)
}

fn two_actions() -> Vec<DVector<f64>> {
    vec![v(&[0.5, 0.5]), v(&[0.75, 0.0])]
}

fn action_name(a: usize) -> &'static str {
    ["a", "b", "c"].get(a).copied().unwrap_or("?")
}

/// Pessimistic social welfare with `theta_1 = (1,0)`, `theta_2 = (0,1)`:
/// reporting `(1,-1)` moves the choice from `a` to `b`.
pub fn check_social_welfare_flip() -> Result<CheckResult> {
    let actions = two_actions();
    let truth = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
    let lie = [v(&[1.0, -1.0]), truth[1].clone()];
    let a0 = chosen(Algorithm::PessimisticSw, &truth, &actions)?;
    let a1 = chosen(Algorithm::PessimisticSw, &lie, &actions)?;
    let (u0, u1) = (truth[0].dot(&actions[a0]), truth[0].dot(&actions[a1]));
    let passed = a0 == 0 && a1 == 1 && (u0 - 0.5).abs() <= TOL && (u1 - 0.75).abs() <= TOL;
    Ok(CheckResult {
        name: "pessimistic_sw manipulation".into(),
        passed,
        expected: "a -> b, utility 0.5 -> 0.75".into(),
        actual: format!("{} -> {}, utility {u0} -> {u1}", action_name(a0), action_name(a1)),
    })
}

/// Maxmin with `theta_1 = (1,0)`, `theta_2 = (1/2,1/2)` and the same lie.
/// The deterministic maxmin flips to `b`; the randomized one moves mass to
/// `b` and still pays the liar.
pub fn check_maxmin_flip() -> Result<CheckResult> {
    let actions = two_actions();
    let truth = [v(&[1.0, 0.0]), v(&[0.5, 0.5])];
    let lie = [v(&[1.0, -1.0]), truth[1].clone()];
    let a0 = maxmin_action(&truth, &actions)?;
    let a1 = maxmin_action(&lie, &actions)?;
    let p0 = maxmin_policy(&truth, &actions)?;
    let p1 = maxmin_policy(&lie, &actions)?;
    let mixed = |p: &[f64]| truth[0].dot(&(&actions[0] * p[0] + &actions[1] * p[1]));
    let (u0, u1) = (truth[0].dot(&actions[a0]), truth[0].dot(&actions[a1]));
    let passed = a0 == 0 && a1 == 1 && (u1 - 0.75).abs() <= TOL && mixed(&p1) > mixed(&p0) + 1e-6;
    Ok(CheckResult {
        name: "maxmin manipulation".into(),
        passed,
        expected: "a -> b, liar's utility rises".into(),
        actual: format!(
            "{} -> {}, utility {u0} -> {u1}; randomized p(a) {:.6} -> {:.6}",
            action_name(a0),
            action_name(a1),
            p0[0],
            p1[0]
        ),
    })
}

/// The single-deviator construction with `k` labelers and gap `eps`:
/// returns `W(pi*) / W(pi~)` together with both chosen actions.
pub fn welfare_collapse(eps: f64, k: usize, bound_b: f64, bound_l: f64) -> Result<RatioRow> {
    let actions = vec![
        v(&[(bound_l * bound_l - 2.0 * eps * eps).sqrt(), 0.0, 0.0]),
        v(&[0.0, eps, (bound_l * bound_l - eps * eps).sqrt()]),
    ];
    let mut truth = vec![v(&[0.0, 1.0, 0.0])];
    truth.extend((1..k).map(|_| v(&[bound_b / (k - 1) as f64, 0.0, 0.0])));
    let mut lie = truth.clone();
    lie[0] = v(&[0.0, 0.0, bound_b]);
    let a0 = chosen(Algorithm::PessimisticSw, &truth, &actions)?;
    let a1 = chosen(Algorithm::PessimisticSw, &lie, &actions)?;
    let w = |a: usize| -> Result<f64> { Ok(welfare_report(&actions[a], &truth)?.welfare) };
    let ratio = w(a0)? / w(a1)?;
    let predicted = (1.0 - 2.0 * eps * eps).sqrt() / eps;
    Ok(RatioRow {
        eps,
        ratio,
        predicted,
        rel_err: (ratio / predicted - 1.0).abs(),
        truthful_action: a0,
        manipulated_action: a1,
    })
}

pub const COLLAPSE_EPS: [f64; 3] = [0.1, 0.01, 0.001];

pub fn verify_counterexamples() -> Result<VerifyReport> {
    let mut checks = vec![check_social_welfare_flip()?, check_maxmin_flip()?];
    let ratios = COLLAPSE_EPS
        .iter()
        .map(|&eps| welfare_collapse(eps, 5, 1.0, 1.0))
        .collect::<Result<Vec<_>>>()?;
    let main = ratios.iter().find(|r| r.eps == 0.01).expect("0.01 is in the grid");
    checks.push(CheckResult {
        name: "welfare collapse".into(),
        passed: main.truthful_action == 0 && main.manipulated_action == 1 && main.ratio > 90.0,
        expected: format!("a -> b, ratio {:.4} > 90", main.predicted),
        actual: format!(
            "{} -> {}, ratio {:.4}",
            action_name(main.truthful_action),
            action_name(main.manipulated_action),
            main.ratio
        ),
    });
    checks.push(CheckResult {
        name: "welfare collapse scaling".into(),
        passed: ratios.iter().all(|r| r.rel_err <= 0.01),
        expected: "ratio within 1% of sqrt(1 - 2 eps^2) / eps".into(),
        actual: ratios
            .iter()
            .map(|r| format!("eps {}: {:.4} vs {:.4}", r.eps, r.ratio, r.predicted))
            .collect::<Vec<_>>()
            .join("; "),
    });
    Ok(VerifyReport { checks, ratios })
}
