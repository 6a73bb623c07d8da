//! Bradley-Terry preferences over comparison queries.
//!
//! Label `0` means the first alternative (`feat_0`) was preferred. Under a
//! reward parameter `theta` this happens with probability
//! `sigmoid(<theta, feat_0 - feat_1>)`. A labeler's strategy is the
//! parameter it samples labels from; queries never change.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ComparisonQuery, QuerySet};
use crate::error::{ensure_finite, Error, Result};

const P_MIN: f64 = f64::EPSILON / 2.0;
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, branching on sign so neither branch overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without cancellation.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that label 0 is emitted for `query` under `theta`.
pub fn bt_preference_prob(theta: &DVector<f64>, query: &ComparisonQuery) -> Result<f64> {
    if theta.len() != query.dim() {
        return Err(Error::Input(format!(
            "parameter has dimension {} but query has {}",
            theta.len(),
            query.dim()
        )));
    }
    ensure_finite(theta.as_slice(), "reward parameter")?;
    ensure_finite(query.diff().as_slice(), "query features")?;
    Ok(sigmoid(theta.dot(query.diff())).clamp(P_MIN, P_MAX))
}

/// Per-query probabilities of label 0.
pub fn label_zero_probs(theta: &DVector<f64>, queries: &QuerySet) -> Result<Vec<f64>> {
    queries.queries().iter().map(|q| bt_preference_prob(theta, q)).collect()
}

/// The observable part of a labeler's data: queries and labels only.
///
/// Estimators consume this view, so they cannot see the parameter that
/// generated the labels.
#[derive(Debug, Clone, Copy)]
pub struct Observations<'a> {
    pub queries: &'a QuerySet,
    pub labels: &'a [u8],
}

impl<'a> Observations<'a> {
    pub fn new(queries: &'a QuerySet, labels: &'a [u8]) -> Result<Self> {
        if queries.len() != labels.len() {
            return Err(Error::Input(format!(
                "{} queries but {} labels",
                queries.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        Ok(Self { queries, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(diff, y)` pairs with `y = +1` for label 0 and `-1` for label 1.
    pub fn signed(&self) -> impl Iterator<Item = (&'a DVector<f64>, f64)> + 'a {
        self.queries
            .queries()
            .iter()
            .zip(self.labels.iter())
            .map(|(q, &l)| (q.diff(), if l == 0 { 1.0 } else { -1.0 }))
    }
}

/// One labeler's reported preference data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelerDataset {
    pub labeler: usize,
    queries: QuerySet,
    labels: Vec<u8>,
    report_param: DVector<f64>,
}

impl LabelerDataset {
    pub fn queries(&self) -> &QuerySet {
        &self.queries
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn observations(&self) -> Observations<'_> {
        Observations {
            queries: &self.queries,
            labels: &self.labels,
        }
    }

    /// The parameter the labels were drawn from. Diagnostics only.
    pub fn diagnostics_report_param(&self) -> &DVector<f64> {
        &self.report_param
    }

    pub fn to_record(&self, diagnostics: bool) -> DatasetRecord {
        DatasetRecord {
            labeler: self.labeler,
            queries: self.queries.clone(),
            labels: self.labels.clone(),
            report_param: diagnostics.then(|| self.report_param.clone()),
        }
    }
}

/// JSON form of a dataset. `report_param` is only present in diagnostics dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub labeler: usize,
    pub queries: QuerySet,
    pub labels: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::serde_vec::opt")]
    pub report_param: Option<DVector<f64>>,
}

/// Labels from pre-drawn uniforms: label `j` is 0 iff `u_j < P(label 0)`.
///
/// Sharing the uniforms between two reports couples their label draws.
pub fn labels_from_uniforms(report: &DVector<f64>, queries: &QuerySet, uniforms: &[f64]) -> Result<Vec<u8>> {
    if uniforms.len() != queries.len() {
        return Err(Error::Input("one uniform per query is required".into()));
    }
    let probs = label_zero_probs(report, queries)?;
    Ok(probs
        .iter()
        .zip(uniforms)
        .map(|(p, u)| if u < p { 0 } else { 1 })
        .collect())
}

pub fn draw_uniforms<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Samples labels for `queries` from the BT model at `report_param`.
pub fn sample_dataset<R: Rng + ?Sized>(
    report_param: &DVector<f64>,
    queries: &QuerySet,
    rng: &mut R,
) -> Result<LabelerDataset> {
    if queries.is_empty() {
        return Err(Error::Input("cannot sample an empty dataset".into()));
    }
    let uniforms = draw_uniforms(queries.len(), rng);
    dataset_from_uniforms(report_param, queries, &uniforms)
}

pub fn dataset_from_uniforms(report_param: &DVector<f64>, queries: &QuerySet, uniforms: &[f64]) -> Result<LabelerDataset> {
    let labels = labels_from_uniforms(report_param, queries, uniforms)?;
    Ok(LabelerDataset {
        labeler: queries.labeler,
        queries: queries.clone(),
        labels,
        report_param: report_param.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::stream_rng;
    use proptest::prelude::*;

    fn axis_query() -> ComparisonQuery {
        ComparisonQuery::new(DVector::from_vec(vec![0.5, 0.5]), DVector::from_vec(vec![0.75, 0.0])).unwrap()
    }

    #[test]
    fn zero_parameter_is_indifferent() {
        let q = axis_query();
        assert_eq!(bt_preference_prob(&DVector::zeros(2), &q).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_probability() {
        // <(1,0), (1/2,1/2) - (3/4,0)> = -1/4
        let p = bt_preference_prob(&DVector::from_vec(vec![1.0, 0.0]), &axis_query()).unwrap();
        let oracle = 1.0 / (1.0 + 0.25f64.exp());
        assert!((p - oracle).abs() < 1e-15);
        assert!((p - 0.437823).abs() < 1e-6);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        let q = axis_query();
        let bad = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(matches!(bt_preference_prob(&bad, &q), Err(Error::Numeric(_))));
        let q_bad = ComparisonQuery::new(DVector::from_vec(vec![f64::INFINITY, 0.0]), DVector::zeros(2)).unwrap();
        assert!(bt_preference_prob(&DVector::zeros(2), &q_bad).is_err());
    }

    #[test]
    fn saturation_stays_inside_unit_interval() {
        let q = axis_query();
        let big = DVector::from_vec(vec![-1e6, 0.0]);
        let p = bt_preference_prob(&big, &q).unwrap();
        assert!(p < 1.0 && p > 0.999);
        let p = bt_preference_prob(&(-big), &q).unwrap();
        assert!(p > 0.0 && p < 1e-3);
    }

    #[test]
    fn log_sigmoid_matches_naive_in_safe_range() {
        for x in [-20.0, -1.0, 0.0, 0.3, 15.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn zero_report_gives_fair_coins() {
        let q = QuerySet::new(0, vec![axis_query(); 10_000]).unwrap();
        let ds = sample_dataset(&DVector::zeros(2), &q, &mut stream_rng(1, 0)).unwrap();
        let mean = ds.labels().iter().map(|&l| l as f64).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn saturated_report_always_prefers_first() {
        let q = axis_query();
        let report = q.diff() * 1e4;
        let set = QuerySet::new(0, vec![q; 200]).unwrap();
        let ds = sample_dataset(&report, &set, &mut stream_rng(2, 0)).unwrap();
        assert!(ds.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn monte_carlo_matches_sigmoid() {
        let set = QuerySet::new(0, vec![axis_query(); 100_000]).unwrap();
        let ds = sample_dataset(&DVector::from_vec(vec![1.0, 0.0]), &set, &mut stream_rng(3, 0)).unwrap();
        let freq = ds.labels().iter().filter(|&&l| l == 0).count() as f64 / 100_000.0;
        assert!((freq - 0.437823).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn report_param_is_diagnostics_only_in_json() {
        let set = QuerySet::new(4, vec![axis_query(); 3]).unwrap();
        let ds = sample_dataset(&DVector::from_vec(vec![0.3, -0.2]), &set, &mut stream_rng(4, 0)).unwrap();
        let plain = serde_json::to_value(ds.to_record(false)).unwrap();
        assert!(plain.get("report_param").is_none());
        assert_eq!(plain["labels"].as_array().unwrap().len(), 3);
        let diag = serde_json::to_value(ds.to_record(true)).unwrap();
        assert_eq!(diag["report_param"].as_array().unwrap().len(), 2);
        let back: DatasetRecord = serde_json::from_value(diag).unwrap();
        assert_eq!(back.report_param.as_ref(), Some(ds.diagnostics_report_param()));
    }

    #[test]
    fn observations_reject_mismatched_labels() {
        let set = QuerySet::new(0, vec![axis_query(); 2]).unwrap();
        assert!(Observations::new(&set, &[0]).is_err());
        assert!(Observations::new(&set, &[0, 2]).is_err());
        assert!(Observations::new(&set, &[0, 1]).is_ok());
    }

    proptest! {
        #[test]
        fn swapping_alternatives_complements(
            theta in proptest::collection::vec(-3.0f64..3.0, 3),
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let theta = DVector::from_vec(theta);
            let q = ComparisonQuery::new(DVector::from_vec(a), DVector::from_vec(b)).unwrap();
            let p = bt_preference_prob(&theta, &q).unwrap();
            let p_swap = bt_preference_prob(&theta, &q.swapped()).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
            prop_assert!((p + p_swap - 1.0).abs() < 1e-12);
        }

        #[test]
        fn probability_increases_with_margin(
            a in proptest::collection::vec(-1.0f64..1.0, 2),
            t in -5.0f64..5.0,
            dt in 0.01f64..2.0,
        ) {
            let q = ComparisonQuery::new(DVector::from_vec(a), DVector::zeros(2)).unwrap();
            prop_assume!(q.diff().norm() > 1e-3);
            let dir = q.diff() / q.diff().norm_squared();
            let p0 = bt_preference_prob(&(&dir * t), &q).unwrap();
            let p1 = bt_preference_prob(&(&dir * (t + dt)), &q).unwrap();
            prop_assert!(p1 > p0);
        }
    }
}
