//! Does the best manipulation gain against the pessimistic median of MLEs
//! scale like `kappa_i * sqrt((d + ln(k/delta)) / n)`? Runs SPSA on seeded
//! instances and reports the gain divided by that rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::experiment::mean_se;
use crate::env::{derive_seed, generate_queries, instance_from_config, stream_rng, InstanceConfig};
use crate::error::{Error, Result};
use crate::estimation::{uniform_coverage, EstimatorConfig};
use crate::mechanism::ActionSpace;
use crate::policy::Algorithm;
use crate::strategic::{spsa_attack, AttackConfig, ReplicationPool, SampledGame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainScalingConfig {
    /// Template; `n` and `seed` are overridden per cell.
    pub instance: InstanceConfig,
    pub instances: usize,
    pub n_grid: Vec<usize>,
    pub algorithm: Algorithm,
    pub estimator: EstimatorConfig,
    pub attack: AttackConfig,
    pub attack_reps: usize,
    pub master_seed: u64,
    /// Pass when the 95th percentile of the ratio is at most this multiple
    /// of its median.
    pub spread: f64,
}

impl Default for GainScalingConfig {
    fn default() -> Self {
        Self {
            instance: InstanceConfig::new(2, 5, 50),
            instances: 20,
            n_grid: vec![50, 200],
            algorithm: Algorithm::PessimisticMomle,
            estimator: EstimatorConfig::default(),
            attack: AttackConfig::default(),
            attack_reps: 32,
            master_seed: 0,
            spread: 10.0,
        }
    }
}

impl GainScalingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.n_grid.is_empty() || self.n_grid.contains(&0) || self.attack_reps == 0 {
            return Err(Error::Config("instances, n_grid and attack_reps must be non-empty and positive".into()));
        }
        self.instance.validate()?;
        self.estimator.validate()?;
        self.attack.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainScalingRow {
    pub instance: usize,
    pub n: usize,
    pub labeler: usize,
    pub gain: f64,
    pub kappa: f64,
    pub rate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainScalingReport {
    pub rows: Vec<GainScalingRow>,
    pub median: f64,
    pub p95: f64,
    pub mean_gain: f64,
    pub passed: bool,
}

fn run_cell(cfg: &GainScalingConfig, index: usize, n: usize) -> Result<GainScalingRow> {
    let seed = derive_seed(cfg.master_seed, index as u64);
    let mut ic = cfg.instance.clone();
    ic.n = n;
    ic.seed = seed;
    let inst = instance_from_config(&ic)?;
    let cell = derive_seed(seed, n as u64);
    let queries = generate_queries(&inst, &mut stream_rng(cell, 0))?;
    let pool = ReplicationPool::new(&inst, &queries, &cfg.estimator, cfg.attack_reps, derive_seed(cell, 1))?;
    // The attacker rotates with the instance index.
    let labeler = index % inst.k;
    let game = SampledGame {
        pool: &pool,
        algorithm: cfg.algorithm,
        labeler,
        space: &ActionSpace::Hyperrectangle,
    };
    let attack = AttackConfig {
        seed: derive_seed(cell, 2),
        ..cfg.attack
    };
    let res = spsa_attack(&game, inst.bound_b, &attack)?;
    let d = inst.d;
    let reg = cfg.estimator.reg_for(d, n);
    let metric = crate::estimation::QueryGeometry::new(&queries[labeler]).metric(reg);
    let kappa = uniform_coverage(&metric)?.value;
    let rate = kappa * ((d as f64 + (inst.k as f64 / cfg.estimator.delta).ln()) / n as f64).sqrt();
    Ok(GainScalingRow {
        instance: index,
        n,
        labeler,
        gain: res.gain,
        kappa,
        rate,
        ratio: res.gain / rate,
    })
}

/// Nearest-rank quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn gain_scaling(cfg: &GainScalingConfig) -> Result<GainScalingReport> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.instances)
        .flat_map(|i| cfg.n_grid.iter().map(move |&n| (i, n)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(i, n)| run_cell(cfg, i, n).map_err(|e| e.context(format!("instance {i} n={n}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let median = quantile(&ratios, 0.5);
    let p95 = quantile(&ratios, 0.95);
    let mean_gain = mean_se(&rows.iter().map(|r| r.gain).collect::<Vec<_>>()).0;
    Ok(GainScalingReport {
        passed: median > 0.0 && p95 <= cfg.spread * median,
        rows,
        median,
        p95,
        mean_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_gain_over_rate() {
        let cfg = GainScalingConfig {
            instances: 2,
            n_grid: vec![50],
            attack: AttackConfig {
                steps: 20,
                ..AttackConfig::default()
            },
            attack_reps: 8,
            ..GainScalingConfig::default()
        };
        let r = gain_scaling(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert!(row.gain >= 0.0 && row.kappa > 0.0);
            assert!((row.ratio * row.rate - row.gain).abs() < 1e-12);
        }
    }

    #[test]
    fn quantiles_by_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 10.0);
        assert_eq!(quantile(&v, 0.95), 19.0);
    }
}
