//! Tiny-MDP run with identical labelers: trajectory-pair data, per-labeler
//! boxes, and the pessimistic median policy over occupancy measures.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::median_interval;
use crate::env::{derive_seed, stream_rng};
use crate::error::{Error, Result};
use crate::estimation::EstimatorConfig;
use crate::mdp::{enumerate_policies, optimize_mdp_pessimistic_median, random_mdp, trajectory_queries, MarkovPolicy, MdpSolveOptions};
use crate::mechanism::LabelerModel;
use crate::preference::sample_dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpDemoConfig {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub d: usize,
    pub k: usize,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    pub estimator: EstimatorConfig,
    pub solver: MdpSolveOptions,
    /// Keep the gradient path's accepted values.
    pub trace: bool,
}

impl Default for MdpDemoConfig {
    fn default() -> Self {
        Self {
            states: 3,
            actions: 2,
            horizon: 3,
            d: 2,
            k: 5,
            n_grid: vec![100, 400, 1600],
            seeds: 10,
            master_seed: 0,
            // Smallest c_f on a coarse grid whose boxes hold the true
            // parameter for at least 90% of labelers here.
            estimator: EstimatorConfig {
                horizon: 3,
                c_f: 0.1,
                ..EstimatorConfig::default()
            },
            solver: MdpSolveOptions::default(),
            trace: false,
        }
    }
}

impl MdpDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 || self.horizon == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::Config("S, A, H, d and k must be positive".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) || self.seeds == 0 {
            return Err(Error::Config("n_grid must be non-empty and positive, seeds >= 1".into()));
        }
        if self.estimator.horizon != self.horizon {
            return Err(Error::Config(format!(
                "estimator horizon {} differs from the MDP horizon {}",
                self.estimator.horizon, self.horizon
            )));
        }
        self.estimator.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpDemoRow {
    pub n: usize,
    pub seed: usize,
    pub optimal_value: f64,
    pub achieved_value: f64,
    pub subopt: f64,
    pub enumeration_value: Option<f64>,
    pub gradient_value: Option<f64>,
    /// Fraction of labelers whose confidence set holds the true parameter.
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdpTraceRow {
    pub n: usize,
    pub seed: usize,
    pub iter: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpDemoPoint {
    pub n: usize,
    pub subopt_mean: f64,
    pub subopt_se: f64,
    pub optimal_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MdpDemoReport {
    pub rows: Vec<MdpDemoRow>,
    pub points: Vec<MdpDemoPoint>,
    /// Largest gap between the two solver paths.
    pub path_gap: f64,
    pub monotone: bool,
    /// Last mean suboptimality over the mean optimal value.
    pub final_ratio: f64,
    pub traces: Vec<MdpTraceRow>,
}

impl MdpDemoReport {
    pub fn passed(&self) -> bool {
        self.monotone && self.final_ratio <= 0.1 && self.path_gap <= 1e-4
    }
}

fn positive_param<R: Rng + ?Sized>(d: usize, bound_b: f64, rng: &mut R) -> DVector<f64> {
    let raw = DVector::from_fn(d, |_, _| rng.random_range(0.1..1.0));
    let norm = raw.norm();
    raw * (bound_b * rng.random_range(0.5..1.0) / norm)
}

fn run_cell(cfg: &MdpDemoConfig, n: usize, seed: usize) -> Result<(MdpDemoRow, Vec<MdpTraceRow>)> {
    let est = &cfg.estimator;
    let inst_seed = derive_seed(cfg.master_seed, seed as u64);
    let mut rng = stream_rng(inst_seed, 0);
    let mdp = random_mdp(cfg.states, cfg.actions, cfg.horizon, cfg.d, est.bound_l, true, &mut rng)?;
    let theta = positive_param(cfg.d, est.bound_b, &mut rng);
    let behavior = MarkovPolicy::uniform(&mdp);
    let mut rng = stream_rng(derive_seed(inst_seed, n as u64), 1);
    let mut boxes = Vec::with_capacity(cfg.k);
    let mut covered = 0;
    for i in 0..cfg.k {
        let qs = trajectory_queries(&mdp, &behavior, i, n, &mut rng)?;
        let ds = sample_dataset(&theta, &qs, &mut rng)?;
        let model = LabelerModel::new(&qs, est, cfg.k)?;
        let e = model.estimate(ds.labels(), None)?;
        covered += usize::from(e.bounds.contains(&theta, 1e-12));
        boxes.push(e.bounds);
    }
    let mbox = median_interval(&boxes)?;
    let sol = optimize_mdp_pessimistic_median(&mdp, &mbox, &cfg.solver)?;
    let best = enumerate_policies(&mdp, |f| Ok(theta.dot(f)))?;
    let achieved = theta.dot(&sol.occupancy.feat);
    let trace = match (&sol.gradient, cfg.trace) {
        (Some(g), true) => g
            .trace
            .iter()
            .enumerate()
            .map(|(iter, &value)| MdpTraceRow { n, seed, iter, value })
            .collect(),
        _ => Vec::new(),
    };
    let row = MdpDemoRow {
        n,
        seed,
        optimal_value: best.value,
        achieved_value: achieved,
        subopt: best.value - achieved,
        enumeration_value: sol.enumeration.as_ref().map(|p| p.value),
        gradient_value: sol.gradient.as_ref().map(|p| p.value),
        coverage: covered as f64 / cfg.k as f64,
    };
    Ok((row, trace))
}

pub fn run_mdp_demo(cfg: &MdpDemoConfig) -> Result<MdpDemoReport> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let (rows, traces): (Vec<MdpDemoRow>, Vec<Vec<MdpTraceRow>>) = cells
        .par_iter()
        .map(|&(n, s)| run_cell(cfg, n, s).map_err(|e| e.context(format!("n={n} seed={s}"))))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let points: Vec<MdpDemoPoint> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let sub: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.subopt).collect();
            let opt: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.optimal_value).collect();
            let (mean, se) = crate::bench::experiment::mean_se(&sub);
            MdpDemoPoint {
                n,
                subopt_mean: mean,
                subopt_se: se,
                optimal_mean: opt.iter().sum::<f64>() / opt.len() as f64,
            }
        })
        .collect();
    let path_gap = rows
        .iter()
        .filter_map(|r| Some((r.enumeration_value? - r.gradient_value?).abs()))
        .fold(0.0, f64::max);
    let monotone = points.windows(2).all(|w| w[1].subopt_mean <= w[0].subopt_mean);
    let last = points.last().expect("n_grid is non-empty");
    Ok(MdpDemoReport {
        final_ratio: last.subopt_mean / last.optimal_mean,
        rows,
        points,
        path_gap,
        monotone,
        traces: traces.concat(),
    })
}
