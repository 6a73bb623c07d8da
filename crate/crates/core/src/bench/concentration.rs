//! Monte Carlo scaling checks for the two concentration results the
//! mechanism relies on: MLE error in the data-covariance norm, and the gap
//! between the coordinate-wise median and the average of i.i.d. vectors.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::coordinate_median;
use crate::env::{derive_seed, generate_queries, instance_from_config, stream_rng, InstanceConfig};
use crate::error::{Error, Result};
use crate::estimation::{confidence_radius, default_reg, fit_mle};
use crate::linalg::{ols_slope, quad_norm};
use crate::preference::sample_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleSuiteConfig {
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub bound_b: f64,
    pub bound_l: f64,
    pub c_f: f64,
}

impl Default for MleSuiteConfig {
    fn default() -> Self {
        // At B = L = 1 the error only reaches its 1/sqrt(n) regime once the
        // MLE stops being pinned by the B-ball; d = 4 gets there by n ~ 1e3.
        Self {
            d: 4,
            n_grid: vec![200, 800, 3200, 12800],
            trials: 200,
            bound_b: 1.0,
            bound_l: 1.0,
            c_f: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianSuiteConfig {
    pub k_grid: Vec<usize>,
    /// Dimension used for the sweep over `k`.
    pub d: usize,
    pub d_grid: Vec<usize>,
    /// Number of vectors used for the sweep over `d`.
    pub k: usize,
    pub sigma: f64,
    pub trials: usize,
}

impl Default for MedianSuiteConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![5, 25, 125],
            d: 16,
            d_grid: vec![4, 16, 64],
            k: 25,
            sigma: 1.0,
            trials: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub delta: f64,
    pub seed: u64,
    /// Allowed deviation of each fitted slope from +-0.5.
    pub slope_tol: f64,
    pub mle: MleSuiteConfig,
    pub median: MedianSuiteConfig,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            seed: 0,
            slope_tol: 0.15,
            mle: MleSuiteConfig::default(),
            median: MedianSuiteConfig::default(),
        }
    }
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        let m = &self.mle;
        if m.d == 0 || m.n_grid.len() < 2 || m.n_grid.contains(&0) || m.trials < 2 {
            return Err(Error::Config("MLE suite needs d > 0, two or more positive n, trials >= 2".into()));
        }
        let q = &self.median;
        if q.k_grid.len() < 2 || q.d_grid.len() < 2 || q.k_grid.contains(&0) || q.d_grid.contains(&0) {
            return Err(Error::Config("median suite needs two or more positive k and d values".into()));
        }
        if q.k == 0 || q.d == 0 || q.trials == 0 || !(q.sigma >= 0.0) {
            return Err(Error::Config("median suite needs k, d, trials > 0 and sigma >= 0".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One grid point: the `(1 - delta)`-quantile of the error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantilePoint {
    pub x: usize,
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeCheck {
    pub name: String,
    pub points: Vec<QuantilePoint>,
    pub slope: f64,
    pub target: f64,
    pub passed: bool,
}

impl SlopeCheck {
    fn new(name: &str, points: Vec<QuantilePoint>, target: f64, tol: f64) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| (p.x as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.quantile.ln()).collect();
        let slope = ols_slope(&xs, &ys);
        Self {
            name: name.into(),
            points,
            slope,
            target,
            passed: (slope - target).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCheck {
    pub c_f: f64,
    /// Fraction of fits with `||theta_hat - theta*||_M <= radius`.
    pub coverage: f64,
    /// Smallest `c_f` that would reach `1 - delta` coverage on these fits.
    pub calibrated_c_f: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub mle: SlopeCheck,
    pub coverage: CoverageCheck,
    pub median_k: SlopeCheck,
    pub median_d: SlopeCheck,
}

impl ConcentrationReport {
    pub fn passed(&self) -> bool {
        self.mle.passed && self.coverage.passed && self.median_k.passed && self.median_d.passed
    }
}

/// Upper `(1 - delta)` empirical quantile (nearest rank).
pub fn upper_quantile(values: &mut [f64], delta: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = ((1.0 - delta) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

struct MleTrial {
    sigma_err: f64,
    /// `||theta_hat - theta*||_M` divided by the radius at `c_f = 1`.
    scaled_err: f64,
}

fn mle_trial(cfg: &MleSuiteConfig, delta: f64, n: usize, seed: u64) -> Result<MleTrial> {
    let mut ic = InstanceConfig::new(cfg.d, 1, n).with_seed(seed);
    ic.bound_b = cfg.bound_b;
    ic.bound_l = cfg.bound_l;
    let inst = instance_from_config(&ic)?;
    let mut rng = stream_rng(seed, 1);
    let qs = generate_queries(&inst, &mut rng)?;
    let ds = sample_dataset(&inst.true_params[0], &qs[0], &mut rng)?;
    let fit = fit_mle(ds.observations(), cfg.bound_b, default_reg(cfg.d, n, delta), 1e-10, 5000)?;
    let err = &fit.theta_hat - &inst.true_params[0];
    let unit = confidence_radius(cfg.d, n, 1, delta, cfg.bound_b, cfg.bound_l, 1, 1.0)?;
    Ok(MleTrial {
        sigma_err: quad_norm(&err, &fit.cov),
        scaled_err: quad_norm(&err, &fit.metric()) / unit,
    })
}

/// MLE error quantiles along the `n` grid, plus confidence-set coverage at
/// the configured `c_f`.
pub fn mle_suite(cfg: &ConcentrationConfig) -> Result<(SlopeCheck, CoverageCheck)> {
    let m = &cfg.mle;
    let mut points = Vec::with_capacity(m.n_grid.len());
    let mut scaled = Vec::new();
    for (gi, &n) in m.n_grid.iter().enumerate() {
        let trials = (0..m.trials)
            .into_par_iter()
            .map(|t| mle_trial(m, cfg.delta, n, derive_seed(cfg.seed, (gi * m.trials + t) as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut errs: Vec<f64> = trials.iter().map(|t| t.sigma_err).collect();
        points.push(QuantilePoint {
            x: n,
            quantile: upper_quantile(&mut errs, cfg.delta),
        });
        scaled.extend(trials.iter().map(|t| t.scaled_err));
    }
    let coverage = scaled.iter().filter(|e| **e <= m.c_f).count() as f64 / scaled.len() as f64;
    let calibrated_c_f = upper_quantile(&mut scaled, cfg.delta);
    Ok((
        SlopeCheck::new("mle error vs n", points, -0.5, cfg.slope_tol),
        CoverageCheck {
            c_f: m.c_f,
            coverage,
            calibrated_c_f,
            passed: coverage >= 1.0 - cfg.delta,
        },
    ))
}

/// `(1 - delta)`-quantile of `||med - avg||_2` over `trials` draws of `k`
/// i.i.d. `N(0, sigma^2 I_d)` vectors.
pub fn median_gap_quantile(k: usize, d: usize, sigma: f64, trials: usize, delta: f64, seed: u64) -> Result<f64> {
    let mut gaps = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, t as u64);
            let vs: Vec<DVector<f64>> = (0..k)
                .map(|_| DVector::from_fn(d, |_, _| sigma * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let avg = vs.iter().fold(DVector::zeros(d), |acc, v| acc + v) / k as f64;
            Ok((coordinate_median(&vs)? - avg).norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(upper_quantile(&mut gaps, delta))
}

pub fn median_suite(cfg: &ConcentrationConfig) -> Result<(SlopeCheck, SlopeCheck)> {
    let q = &cfg.median;
    let point = |k: usize, d: usize, tag: u64| -> Result<QuantilePoint> {
        let seed = derive_seed(cfg.seed, tag);
        Ok(QuantilePoint {
            x: 0,
            quantile: median_gap_quantile(k, d, q.sigma, q.trials, cfg.delta, seed)?,
        })
    };
    let by_k = q
        .k_grid
        .iter()
        .map(|&k| Ok(QuantilePoint { x: k, ..point(k, q.d, 1 << 32 | k as u64)? }))
        .collect::<Result<Vec<_>>>()?;
    let by_d = q
        .d_grid
        .iter()
        .map(|&d| Ok(QuantilePoint { x: d, ..point(q.k, d, 2 << 32 | d as u64)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        SlopeCheck::new("median gap vs k", by_k, -0.5, cfg.slope_tol),
        SlopeCheck::new("median gap vs d", by_d, 0.5, cfg.slope_tol),
    ))
}

pub fn concentration_suite(cfg: &ConcentrationConfig) -> Result<ConcentrationReport> {
    cfg.validate()?;
    let (mle, coverage) = mle_suite(cfg)?;
    let (median_k, median_d) = median_suite(cfg)?;
    Ok(ConcentrationReport {
        mle,
        coverage,
        median_k,
        median_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_distribution_has_zero_gap() {
        assert_eq!(median_gap_quantile(7, 4, 0.0, 50, 0.1, 1).unwrap(), 0.0);
    }

    #[test]
    fn single_vector_has_zero_gap() {
        assert_eq!(median_gap_quantile(1, 8, 1.0, 50, 0.1, 2).unwrap(), 0.0);
    }

    #[test]
    fn quantile_rank() {
        let mut v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(upper_quantile(&mut v, 0.1), 9.0);
        let mut v = vec![3.0];
        assert_eq!(upper_quantile(&mut v, 0.1), 3.0);
    }

    #[test]
    fn median_gap_scales_with_k() {
        let cfg = ConcentrationConfig::default();
        let (by_k, by_d) = median_suite(&cfg).unwrap();
        assert!((-0.65..=-0.35).contains(&by_k.slope), "{by_k:?}");
        assert!((0.35..=0.65).contains(&by_d.slope), "{by_d:?}");
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ConcentrationConfig::from_toml_str("delta = 0.05\n[mle]\nd = 3\nn_grid = [100, 400]\n").unwrap();
        assert_eq!(cfg.mle.d, 3);
        assert_eq!(cfg.median.k_grid, vec![5, 25, 125]);
        assert!(ConcentrationConfig::from_toml_str("[mle]\nn_grid = [100]\n").is_err());
        assert!(ConcentrationConfig::from_toml_str("bogus = 1\n").is_err());
    }
}
