//! The experiment grid: truthful and strategic suboptimality of each
//! algorithm over sample sizes and seeds.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{derive_seed, generate_instance, generate_queries, stream_rng, InstanceConfig, ProblemInstance};
use crate::error::{Error, Result};
use crate::estimation::EstimatorConfig;
use crate::mechanism::{ActionSpace, LabelerEstimate, LabelerModel};
use crate::policy::{welfare_report, Algorithm};
use crate::preference::DatasetRecord;
use crate::strategic::{spsa_attack, AttackConfig, ExactGame, ReplicationPool, ReportOracle, SampledGame, MAX_EXACT_N};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Truthful,
    Strategic,
    Both,
}

impl Regime {
    fn includes(self, other: Regime) -> bool {
        self == Regime::Both || self == other
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Truthful => "truthful",
            Regime::Strategic => "strategic",
            Regime::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `n` and `seed` are overridden per cell.
    pub instance: InstanceConfig,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_regime")]
    pub regime: Regime,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Label replications the attacker optimizes against.
    #[serde(default = "default_reps")]
    pub attack_reps: usize,
    /// Fresh replications used to score every reported number.
    #[serde(default = "default_reps")]
    pub eval_reps: usize,
    /// Record wall-clock time in `runtime_ms`; off keeps output byte-stable.
    #[serde(default)]
    pub timing: bool,
    /// Attack against the exact label distribution of replication 0's other
    /// labelers instead of the sampled pool. Needs every `n <= 12`.
    #[serde(default)]
    pub exact: bool,
    /// Keep every attack trajectory.
    #[serde(default)]
    pub trace: bool,
    /// Keep the eval datasets of replication 0, including the parameter each
    /// was labeled from.
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub output: Option<String>,
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}
fn default_n_grid() -> Vec<usize> {
    vec![20, 50, 100, 200]
}
fn default_seeds() -> usize {
    5
}
fn default_regime() -> Regime {
    Regime::Both
}
fn default_reps() -> usize {
    32
}

impl ExperimentConfig {
    pub fn new(instance: InstanceConfig) -> Self {
        Self {
            instance,
            algorithms: all_algorithms(),
            n_grid: default_n_grid(),
            seeds: default_seeds(),
            master_seed: 0,
            regime: default_regime(),
            estimator: EstimatorConfig::default(),
            attack: AttackConfig::default(),
            attack_reps: default_reps(),
            eval_reps: default_reps(),
            timing: false,
            exact: false,
            trace: false,
            diagnostics: false,
            output: None,
        }
    }

    /// `d = 16`, `k = 5`, `B = L = 1`, both regimes.
    pub fn paper_scale() -> Self {
        Self::new(InstanceConfig::new(16, 5, 200))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::Config("n_grid must be non-empty with positive entries".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms selected".into()));
        }
        if self.attack_reps == 0 || self.eval_reps == 0 {
            return Err(Error::Config("replication counts must be positive".into()));
        }
        if self.exact {
            if let Some(&n) = self.n_grid.iter().find(|&&n| n > MAX_EXACT_N) {
                return Err(Error::Config(format!("exact mode needs n <= {MAX_EXACT_N}, n_grid has {n}")));
            }
        }
        self.instance.validate()?;
        self.attack.validate()?;
        self.estimator.validate()?;
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml_str(&std::fs::read_to_string(path)?)
            .map_err(|e| e.context(format!("reading {}", path.display())))
    }

    /// Ground truth for a seed; shared across the sample-size grid.
    pub fn instance_for(&self, n: usize, seed: usize) -> Result<ProblemInstance> {
        let mut cfg = self.instance.clone();
        cfg.n = n;
        cfg.seed = derive_seed(self.master_seed, seed as u64);
        generate_instance(&cfg, &mut stream_rng(cfg.seed, 0))
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub seed: usize,
    pub regime: Regime,
    pub subopt: f64,
    pub alpha: Option<f64>,
    /// Mean utility gain of the strategic labeler; empty for truthful rows.
    pub gain: Option<f64>,
    pub runtime_ms: u64,
}

/// One line of `welfare.csv`: the same cell with welfare detail.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub seed: usize,
    pub regime: Regime,
    pub welfare: f64,
    pub optimal_welfare: f64,
    pub subopt: f64,
    pub alpha: Option<f64>,
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub regime: Regime,
    pub seeds: usize,
    pub subopt_mean: f64,
    pub subopt_se: f64,
    pub optimal_welfare_mean: f64,
    pub gain_mean: Option<f64>,
    pub gain_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Welfare scale of every number: `B`, `L`, and `W* = sum_j |mean theta*_j|`.
    pub bound_b: f64,
    pub bound_l: f64,
    pub cells: Vec<SummaryCell>,
    pub errors: Vec<String>,
}

impl Summary {
    pub fn cell(&self, algorithm: Algorithm, n: usize, regime: Regime) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.algorithm == algorithm && c.n == n && c.regime == regime)
    }
}

/// One SPSA evaluation point of one labeler's attack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub seed: usize,
    pub labeler: usize,
    pub step: usize,
    pub utility: f64,
    pub report_norm: f64,
}

/// A dataset dump line. `algorithm` is empty for truthful data, which every
/// algorithm shares.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticRecord {
    pub n: usize,
    pub seed: usize,
    pub regime: Regime,
    pub algorithm: Option<Algorithm>,
    pub dataset: DatasetRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub welfare: Vec<WelfareRow>,
    pub summary: Summary,
    /// Filled when `trace` is set.
    pub traces: Vec<TraceRow>,
    /// Filled when `diagnostics` is set.
    pub datasets: Vec<DiagnosticRecord>,
}

struct Shared {
    instance: ProblemInstance,
    instance_queries: Vec<crate::env::QuerySet>,
    attack_pool: ReplicationPool,
    eval_pool: ReplicationPool,
}

const ATTACK_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const QUERY_STREAM: u64 = 3;
const SPSA_STREAM: u64 = 4;

fn prepare(cfg: &ExperimentConfig, n: usize, seed: usize) -> Result<Shared> {
    let instance = cfg.instance_for(n, seed)?;
    let cell_seed = derive_seed(instance.seed, n as u64);
    let queries = generate_queries(&instance, &mut stream_rng(cell_seed, QUERY_STREAM))?;
    let models = queries
        .iter()
        .map(|q| LabelerModel::new(q, &cfg.estimator, instance.k))
        .collect::<Result<Vec<_>>>()?;
    let attack_pool = ReplicationPool::with_models(
        &instance,
        &queries,
        models.clone(),
        cfg.attack_reps,
        derive_seed(cell_seed, ATTACK_STREAM),
    )?;
    let eval_pool =
        ReplicationPool::with_models(&instance, &queries, models, cfg.eval_reps, derive_seed(cell_seed, EVAL_STREAM))?;
    Ok(Shared {
        instance,
        instance_queries: queries,
        attack_pool,
        eval_pool,
    })
}

struct Tally {
    welfare: f64,
    utilities: Vec<f64>,
    count: usize,
}

impl Tally {
    fn new(k: usize) -> Self {
        Self {
            welfare: 0.0,
            utilities: vec![0.0; k],
            count: 0,
        }
    }

    fn add(&mut self, z: &nalgebra::DVector<f64>, params: &[nalgebra::DVector<f64>]) -> Result<f64> {
        let w = welfare_report(z, params)?;
        self.welfare += w.welfare;
        for (acc, u) in self.utilities.iter_mut().zip(&w.utilities) {
            *acc += u;
        }
        self.count += 1;
        Ok(w.optimal_welfare)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        self,
        optimal: f64,
        algorithm: Algorithm,
        n: usize,
        seed: usize,
        regime: Regime,
        gain: Option<f64>,
        runtime_ms: u64,
    ) -> (ResultRow, WelfareRow) {
        let c = self.count as f64;
        let welfare = self.welfare / c;
        let subopt = optimal - welfare;
        let alpha = (optimal > 0.0).then(|| welfare / optimal);
        (
            ResultRow {
                algorithm,
                n,
                seed,
                regime,
                subopt,
                alpha,
                gain,
                runtime_ms,
            },
            WelfareRow {
                algorithm,
                n,
                seed,
                regime,
                welfare,
                optimal_welfare: optimal,
                subopt,
                alpha,
                utilities: self.utilities.into_iter().map(|u| u / c).collect(),
            },
        )
    }
}

#[derive(Default)]
struct CellOut {
    pairs: Vec<(ResultRow, WelfareRow)>,
    traces: Vec<TraceRow>,
    datasets: Vec<DiagnosticRecord>,
}

fn exact_game(shared: &Shared, algorithm: Algorithm, i: usize, est: &EstimatorConfig) -> Result<ExactGame> {
    let pool = &shared.attack_pool;
    let others: Vec<LabelerEstimate> = pool
        .truthful_estimates(0)
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, e)| e.clone())
        .collect();
    ExactGame::new(
        algorithm,
        pool.params()[i].clone(),
        shared.instance_queries[i].clone(),
        est,
        others,
        ActionSpace::Hyperrectangle,
    )
}

fn run_cell(cfg: &ExperimentConfig, shared: &Shared, algorithm: Algorithm, n: usize, seed: usize) -> Result<CellOut> {
    let params = &shared.instance.true_params;
    let k = params.len();
    let space = ActionSpace::Hyperrectangle;
    let elapsed = |t: Instant| if cfg.timing { t.elapsed().as_millis() as u64 } else { 0 };
    let mut cell = CellOut::default();
    let out = &mut cell.pairs;

    let start = Instant::now();
    let mut truthful = Tally::new(k);
    let mut optimal = 0.0;
    for r in 0..shared.eval_pool.len() {
        optimal = truthful.add(&shared.eval_pool.outcome(algorithm, &space, r, None)?, params)?;
    }
    let truthful_utilities: Vec<f64> = truthful.utilities.iter().map(|u| u / truthful.count as f64).collect();
    if cfg.regime.includes(Regime::Truthful) {
        out.push(truthful.finish(optimal, algorithm, n, seed, Regime::Truthful, None, elapsed(start)));
    }

    if cfg.regime.includes(Regime::Strategic) {
        let start = Instant::now();
        let mut strategic = Tally::new(k);
        let mut gain = 0.0;
        for i in 0..k {
            let sampled = SampledGame {
                pool: &shared.attack_pool,
                algorithm,
                labeler: i,
                space: &space,
            };
            let exact = if cfg.exact {
                Some(exact_game(shared, algorithm, i, &cfg.estimator)?)
            } else {
                None
            };
            let game: &dyn ReportOracle = match &exact {
                Some(g) => g,
                None => &sampled,
            };
            let attack = AttackConfig {
                seed: derive_seed(
                    derive_seed(shared.instance.seed, n as u64),
                    SPSA_STREAM + 16 * (i as u64 + 1) + 1024 * algorithm as u64,
                ),
                ..cfg.attack
            };
            let result = spsa_attack(game, shared.instance.bound_b, &attack)
                .map_err(|e| e.context(format!("attack by labeler {i}")))?;
            if cfg.trace {
                cell.traces.extend(result.trajectory.iter().map(|t| TraceRow {
                    algorithm,
                    n,
                    seed,
                    labeler: i,
                    step: t.step,
                    utility: t.utility,
                    report_norm: t.report_norm,
                }));
            }
            if cfg.diagnostics {
                cell.datasets.push(DiagnosticRecord {
                    n,
                    seed,
                    regime: Regime::Strategic,
                    algorithm: Some(algorithm),
                    dataset: shared.eval_pool.dataset(0, i, &result.best_report)?.to_record(true),
                });
            }
            let mut own = 0.0;
            for r in 0..shared.eval_pool.len() {
                let z = shared.eval_pool.outcome(algorithm, &space, r, Some((i, &result.best_report)))?;
                own += params[i].dot(&z);
                strategic.add(&z, params)?;
            }
            gain += own / shared.eval_pool.len() as f64 - truthful_utilities[i];
        }
        let gain = gain / k as f64;
        cell.pairs
            .push(strategic.finish(optimal, algorithm, n, seed, Regime::Strategic, Some(gain), elapsed(start)));
    }
    Ok(cell)
}

fn failed_rows(cfg: &ExperimentConfig, algorithm: Algorithm, n: usize, seed: usize) -> Vec<(ResultRow, WelfareRow)> {
    [Regime::Truthful, Regime::Strategic]
        .into_iter()
        .filter(|r| cfg.regime.includes(*r))
        .map(|regime| {
            let tally = Tally {
                welfare: f64::NAN,
                utilities: vec![f64::NAN; cfg.instance.k],
                count: 1,
            };
            let gain = (regime == Regime::Strategic).then_some(f64::NAN);
            tally.finish(f64::NAN, algorithm, n, seed, regime, gain, 0)
        })
        .collect()
}

/// Runs the grid. Cells run in parallel and merge in `(n, seed, algorithm)`
/// order, so output is independent of the thread count. A failing cell yields
/// NaN rows and an entry in `summary.errors`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let units: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let shared: Vec<Result<Shared>> = units.par_iter().map(|&(n, s)| prepare(cfg, n, s)).collect();
    let cells: Vec<(usize, usize, usize)> = (0..units.len())
        .flat_map(|u| (0..cfg.algorithms.len()).map(move |a| (u, a, 0)))
        .collect();
    let results: Vec<(CellOut, Option<String>)> = cells
        .par_iter()
        .map(|&(u, a, _)| {
            let (n, seed) = units[u];
            let algorithm = cfg.algorithms[a];
            let outcome = match &shared[u] {
                Ok(sh) => run_cell(cfg, sh, algorithm, n, seed),
                Err(e) => Err(Error::Input(e.to_string())),
            };
            match outcome {
                Ok(out) => (out, None),
                Err(e) => (
                    CellOut {
                        pairs: failed_rows(cfg, algorithm, n, seed),
                        ..CellOut::default()
                    },
                    Some(format!("{algorithm} n={n} seed={seed}: {e}")),
                ),
            }
        })
        .collect();
    let mut rows = Vec::new();
    let mut welfare = Vec::new();
    let mut errors = Vec::new();
    let mut traces = Vec::new();
    let mut datasets = Vec::new();
    if cfg.diagnostics {
        for (&(n, seed), sh) in units.iter().zip(&shared) {
            let Ok(sh) = sh else { continue };
            for (i, theta) in sh.instance.true_params.iter().enumerate() {
                datasets.push(DiagnosticRecord {
                    n,
                    seed,
                    regime: Regime::Truthful,
                    algorithm: None,
                    dataset: sh.eval_pool.dataset(0, i, theta)?.to_record(true),
                });
            }
        }
    }
    for (cell, err) in results {
        for (r, w) in cell.pairs {
            rows.push(r);
            welfare.push(w);
        }
        traces.extend(cell.traces);
        datasets.extend(cell.datasets);
        errors.extend(err);
    }
    let summary = summarize(cfg, &rows, &welfare, errors);
    Ok(ExperimentOutput {
        rows,
        welfare,
        summary,
        traces,
        datasets,
    })
}

pub(crate) fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(cfg: &ExperimentConfig, rows: &[ResultRow], welfare: &[WelfareRow], errors: Vec<String>) -> Summary {
    let mut groups: BTreeMap<(Algorithm, usize, Regime), Vec<usize>> = BTreeMap::new();
    for (idx, r) in rows.iter().enumerate() {
        groups.entry((r.algorithm, r.n, r.regime)).or_default().push(idx);
    }
    let cells = groups
        .into_iter()
        .map(|((algorithm, n, regime), idx)| {
            let pick = |f: &dyn Fn(usize) -> f64| idx.iter().map(|&i| f(i)).collect::<Vec<_>>();
            let (subopt_mean, subopt_se) = mean_se(&pick(&|i| rows[i].subopt));
            let (optimal_welfare_mean, _) = mean_se(&pick(&|i| welfare[i].optimal_welfare));
            let gains: Vec<f64> = idx.iter().filter_map(|&i| rows[i].gain).collect();
            let (gain_mean, gain_se) = if gains.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&gains);
                (Some(m), Some(s))
            };
            SummaryCell {
                algorithm,
                n,
                regime,
                seeds: idx.len(),
                subopt_mean,
                subopt_se,
                optimal_welfare_mean,
                gain_mean,
                gain_se,
            }
        })
        .collect();
    Summary {
        bound_b: cfg.instance.bound_b,
        bound_l: cfg.instance.bound_l,
        cells,
        errors,
    }
}

pub const RESULT_HEADER: &str = "algorithm,n,seed,regime,subopt,alpha,gain,runtime_ms";

impl ExperimentOutput {
    pub fn write_results<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_welfare<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        let k = self.welfare.first().map_or(0, |r| r.utilities.len());
        let mut header: Vec<String> = ["algorithm", "n", "seed", "regime", "W", "W_star", "subopt", "alpha"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=k).map(|i| format!("J_{i}")));
        w.write_record(&header)?;
        for r in &self.welfare {
            let mut rec = vec![
                r.algorithm.to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                r.regime.name().to_string(),
                r.welfare.to_string(),
                r.optimal_welfare.to_string(),
                r.subopt.to_string(),
                r.alpha.map_or(String::new(), |a| a.to_string()),
            ];
            rec.extend(r.utilities.iter().map(|u| u.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_traces<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
        for row in &self.traces {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per line.
    pub fn write_datasets<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.datasets {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes `results`, `welfare` (`.csv`, or `.tsv` with `tsv`) and
    /// `summary.json` into `dir`, plus `traces` and `datasets.jsonl` when
    /// those were collected.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>, tsv: bool) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let (ext, delim) = if tsv { ("tsv", b'\t') } else { ("csv", b',') };
        self.write_results(std::fs::File::create(dir.join(format!("results.{ext}")))?, delim)?;
        self.write_welfare(std::fs::File::create(dir.join(format!("welfare.{ext}")))?, delim)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        if !self.traces.is_empty() {
            self.write_traces(std::fs::File::create(dir.join(format!("traces.{ext}")))?, delim)?;
        }
        if !self.datasets.is_empty() {
            self.write_datasets(std::io::BufWriter::new(std::fs::File::create(dir.join("datasets.jsonl"))?))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(regime: Regime) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(InstanceConfig::new(3, 3, 20));
        cfg.n_grid = vec![20];
        cfg.seeds = 1;
        cfg.regime = regime;
        cfg.attack.steps = 10;
        cfg.attack_reps = 4;
        cfg.eval_reps = 4;
        cfg
    }

    #[test]
    fn truthful_cell_count() {
        let out = run_experiment(&tiny(Regime::Truthful)).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.regime == Regime::Truthful && r.gain.is_none()));
        assert!(out.rows.iter().all(|r| r.subopt >= -1e-9));
        let mut buf = Vec::new();
        out.write_results(&mut buf, b',').unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULT_HEADER);
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn both_regimes_and_determinism() {
        let cfg = tiny(Regime::Both);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows.len(), 8);
        assert_eq!(a, b);
        assert!(a.summary.errors.is_empty());
        let cell = a.summary.cell(Algorithm::NaiveMle, 20, Regime::Strategic).unwrap();
        assert!(cell.gain_mean.is_some());
    }

    #[test]
    fn traces_and_diagnostics_are_collected() {
        let mut cfg = tiny(Regime::Strategic);
        cfg.algorithms = vec![Algorithm::NaiveMle];
        cfg.trace = true;
        cfg.diagnostics = true;
        let out = run_experiment(&cfg).unwrap();
        assert!(!out.traces.is_empty());
        assert!(out.traces.iter().all(|t| t.labeler < 3 && t.report_norm <= 1.0 + 1e-12));
        // Three truthful and three attacked datasets.
        assert_eq!(out.datasets.len(), 6);
        assert!(out.datasets.iter().all(|d| d.dataset.report_param.is_some()));
        let mut buf = Vec::new();
        out.write_datasets(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
    }

    #[test]
    fn exact_mode_runs_and_rejects_large_n() {
        let mut cfg = tiny(Regime::Strategic);
        cfg.exact = true;
        cfg.algorithms = vec![Algorithm::PessimisticMomle];
        cfg.n_grid = vec![6];
        cfg.instance.n = 6;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.summary.errors.is_empty(), "{:?}", out.summary.errors);
        cfg.n_grid = vec![20];
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let text = r#"
            n_grid = [20, 50]
            seeds = 2
            regime = "truthful"
            algorithms = ["naive_mle", "pessimistic_momle"]
            [instance]
            d = 4
            k = 3
            n = 20
            [estimator]
            c_f = 0.25
            [attack]
            steps = 5
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.algorithms, vec![Algorithm::NaiveMle, Algorithm::PessimisticMomle]);
        assert_eq!(cfg.estimator.c_f, 0.25);
        assert_eq!(cfg.attack.steps, 5);
        let back = ExperimentConfig::from_toml_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_toml_str("n_grid = []\n[instance]\nd=1\nk=1\nn=1").unwrap_err().is_config());
        assert!(ExperimentConfig::from_toml_str("[instance]\nd=1\nk=1\nn=1\nbogus=3").is_err());
    }
}
