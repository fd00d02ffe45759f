use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Metric, Strategy};
use super::metrics::{align_to_truth, metric_l2q, metric_param_error, ParamFamily};
use crate::em::{EmConfig, FittedMixture};
use crate::error::{Error, Result};
use crate::mixture::{sample_source, sample_target, LatentConceptSystem};
use crate::numeric::seeding::{derive, fnv1a64};
use crate::numeric::{dot, stats};
use crate::strategies::{latent_concept_identification, refine_observed, weak_train, WeakTrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Seed of one (strategy, n, replicate) cell: FNV-1a of the strategy name
/// folded into the base seed, then the source size and replicate.
pub fn cell_seed(base: u64, strategy: Strategy, n_p: usize, replicate: usize) -> u64 {
    derive(derive(derive(base, fnv1a64(strategy.name().as_bytes())), n_p as u64), replicate as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub n_p: usize,
    pub n_q: usize,
    pub replicate: usize,
    pub seed: u64,
    pub status: RowStatus,
    pub param_error: Option<f64>,
    pub l2q_error: Option<f64>,
    pub l2q_se: Option<f64>,
    pub assignment_correct: Option<bool>,
    pub reason: Option<String>,
    pub wall_time_ms: f64,
}

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub k: usize,
    pub lambda: f64,
    pub em: EmConfig,
    pub mc_points: usize,
    pub metrics: Vec<Metric>,
}

impl RunSettings {
    pub fn from_config(cfg: &ExperimentConfig, system: &LatentConceptSystem) -> Self {
        Self {
            k: cfg.k.unwrap_or(system.k()),
            lambda: cfg.lambda,
            em: cfg.em.clone(),
            mc_points: cfg.mc_points,
            metrics: cfg.metrics.clone(),
        }
    }
}

struct Outcome {
    param_error: Option<f64>,
    l2q: Option<(f64, f64)>,
    assignment_correct: Option<bool>,
}

fn linear(beta: Vec<f64>) -> impl Fn(&[f64]) -> f64 {
    move |x| dot(&beta, x)
}

fn execute(
    system: &LatentConceptSystem,
    strategy: Strategy,
    n_p: usize,
    n_q: usize,
    seed: u64,
    s: &RunSettings,
) -> std::result::Result<Outcome, (Error, Option<bool>)> {
    let source = sample_source(system, n_p, derive(seed, 1)).map_err(|e| (e, None))?;
    let target = sample_target(system, n_q, derive(seed, 2)).map_err(|e| (e, None))?;
    let em = EmConfig { seed: derive(seed, 3), ..s.em.clone() };
    let mc_seed = derive(seed, 5);
    let want_l2 = s.metrics.contains(&Metric::L2q);
    let want_param = s.metrics.contains(&Metric::ParamError);
    let l2 = |f: &dyn Fn(&[f64]) -> f64| -> Result<Option<(f64, f64)>> {
        if !want_l2 {
            return Ok(None);
        }
        metric_l2q(f, system, s.mc_points, mc_seed).map(|e| Some((e.value, e.se)))
    };
    let plain = |e: Error| (e, None);
    match strategy {
        Strategy::Identify => {
            let id = match latent_concept_identification(&source, &target, s.k, &em) {
                Ok(id) => id,
                Err(e @ Error::NonBijectiveAssignment { .. }) => return Err((e, Some(false))),
                Err(e) => return Err((e, None)),
            };
            let l2q = l2(&|x| id.regression(x)).map_err(plain)?;
            let aligned = s.k == system.k();
            let param_error = if want_param && aligned {
                Some(metric_param_error(&id.target_model, system, ParamFamily::Target).map_err(plain)?)
            } else {
                None
            };
            let assignment_correct = if aligned {
                let (src, _) = align_to_truth(&id.source_fit, system, ParamFamily::Source).map_err(plain)?;
                let (tgt, _) = align_to_truth(&id.target_fit, system, ParamFamily::Target).map_err(plain)?;
                Some((0..system.k()).all(|t| id.assignment.a[tgt[t]] == src[t]))
            } else {
                None
            };
            Ok(Outcome { param_error, l2q, assignment_correct })
        }
        Strategy::WeakTrain => {
            let cfg = WeakTrainConfig { lambda: s.lambda, k_fit: s.k, em };
            let fit: FittedMixture = weak_train(&source, &target, &cfg).map_err(plain)?;
            let l2q = l2(&|x| fit.strong_regression(x).expect("weak training fills the strong slot")).map_err(plain)?;
            Ok(Outcome { param_error: None, l2q, assignment_correct: None })
        }
        Strategy::Refine => {
            let fit = crate::em::fit_source_mle(&source, s.k, &em).map_err(plain)?;
            let refined = refine_observed(&fit, &target, derive(seed, 4)).map_err(plain)?;
            let f = linear(refined.least_squares(s.em.ridge).map_err(plain)?);
            let l2q = l2(&f).map_err(plain)?;
            Ok(Outcome { param_error: None, l2q, assignment_correct: None })
        }
    }
}

fn run_cell(
    system: &LatentConceptSystem,
    strategy: Strategy,
    (n_p, n_q): (usize, usize),
    replicate: usize,
    seed: u64,
    settings: &RunSettings,
) -> (StrategyReport, Option<Error>) {
    let start = Instant::now();
    let outcome = execute(system, strategy, n_p, n_q, seed, settings);
    let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut row = StrategyReport {
        schema_version: SCHEMA_VERSION,
        strategy,
        n_p,
        n_q,
        replicate,
        seed,
        status: RowStatus::Ok,
        param_error: None,
        l2q_error: None,
        l2q_se: None,
        assignment_correct: None,
        reason: None,
        wall_time_ms,
    };
    match outcome {
        Ok(o) => {
            row.param_error = o.param_error;
            row.l2q_error = o.l2q.map(|v| v.0);
            row.l2q_se = o.l2q.map(|v| v.1);
            row.assignment_correct = o.assignment_correct;
            (row, None)
        }
        Err((e, assigned)) => {
            row.status = RowStatus::Failed;
            row.assignment_correct = assigned;
            row.reason = Some(e.to_string());
            (row, Some(e))
        }
    }
}

/// Samples both domains, runs one strategy and scores it. Errors become a
/// failed row carrying the message.
pub fn run_strategy(
    system: &LatentConceptSystem,
    strategy: Strategy,
    sizes: (usize, usize),
    replicate: usize,
    seed: u64,
    settings: &RunSettings,
) -> StrategyReport {
    run_cell(system, strategy, sizes, replicate, seed, settings).0
}

/// Like [`run_strategy`] but returns the error itself when the strategy fails.
pub fn try_run_strategy(
    system: &LatentConceptSystem,
    strategy: Strategy,
    sizes: (usize, usize),
    seed: u64,
    settings: &RunSettings,
) -> Result<StrategyReport> {
    match run_cell(system, strategy, sizes, 0, seed, settings) {
        (row, None) => Ok(row),
        (_, Some(e)) => Err(e),
    }
}

/// Median and spread of one metric over the successful replicates of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub n_p: usize,
    pub n_q: usize,
    pub metric: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub iqr: Option<f64>,
}

/// Least-squares slope of log median metric against log n_p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub metric: String,
    pub n_points: usize,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<StrategyReport>,
    pub aggregates: Vec<Aggregate>,
    pub slopes: Vec<Slope>,
}

impl ExperimentReport {
    pub fn aggregate(&self, strategy: Strategy, n_p: usize, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.strategy == strategy && a.n_p == n_p && a.metric == metric)
    }

    pub fn slope(&self, strategy: Strategy, metric: &str) -> Option<&Slope> {
        self.slopes.iter().find(|s| s.strategy == strategy && s.metric == metric)
    }

    /// Strategies in first-appearance order.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out: Vec<Strategy> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.strategy) {
                out.push(r.strategy);
            }
        }
        out
    }
}

pub const AGGREGATE_METRICS: [&str; 2] = ["l2q_error", "param_error"];

fn metric_value(row: &StrategyReport, metric: &str) -> Option<f64> {
    match metric {
        "l2q_error" => row.l2q_error,
        "param_error" => row.param_error,
        _ => None,
    }
}

/// Per-(strategy, n) aggregates and per-strategy slopes from raw rows.
pub fn summarize(rows: &[StrategyReport]) -> (Vec<Aggregate>, Vec<Slope>) {
    let mut cells: Vec<(Strategy, usize, usize)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.strategy, r.n_p, r.n_q)) {
            cells.push((r.strategy, r.n_p, r.n_q));
        }
    }
    let mut aggregates = Vec::new();
    for &(strategy, n_p, n_q) in &cells {
        let cell: Vec<&StrategyReport> = rows.iter().filter(|r| r.strategy == strategy && r.n_p == n_p).collect();
        let n_failed = cell.iter().filter(|r| r.status == RowStatus::Failed).count();
        for metric in AGGREGATE_METRICS {
            let v: Vec<f64> = cell.iter().filter_map(|r| metric_value(r, metric)).collect();
            let some = |x: f64| (!v.is_empty()).then_some(x);
            let (q25, q75) = (stats::quantile(&v, 0.25), stats::quantile(&v, 0.75));
            aggregates.push(Aggregate {
                schema_version: SCHEMA_VERSION,
                strategy,
                n_p,
                n_q,
                metric: metric.to_string(),
                n_ok: v.len(),
                n_failed,
                median: some(stats::median(&v)),
                q25: some(q25),
                q75: some(q75),
                iqr: some(q75 - q25),
            });
        }
    }
    let mut slopes = Vec::new();
    let mut strategies: Vec<Strategy> = cells.iter().map(|c| c.0).collect();
    strategies.dedup();
    for strategy in strategies {
        for metric in AGGREGATE_METRICS {
            let (xs, ys): (Vec<f64>, Vec<f64>) = aggregates
                .iter()
                .filter(|a| a.strategy == strategy && a.metric == metric)
                .filter_map(|a| a.median.filter(|m| *m > 0.0).map(|m| ((a.n_p as f64).ln(), m.ln())))
                .unzip();
            if xs.is_empty() {
                continue;
            }
            let fit = stats::fit_line(&xs, &ys);
            slopes.push(Slope {
                schema_version: SCHEMA_VERSION,
                strategy,
                metric: metric.to_string(),
                n_points: xs.len(),
                slope: fit.map(|f| f.slope),
                slope_se: fit.map(|f| f.slope_se).filter(|v| v.is_finite()),
            });
        }
    }
    (aggregates, slopes)
}

pub const ROWS_FILE: &str = "rows.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const SLOPES_FILE: &str = "slopes.csv";

fn write_all<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for it in items {
        w.serialize(it)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<StrategyReport>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Runs every (strategy, n, replicate) cell of `cfg`, appending rows to
/// `rows.csv` cell by cell in a fixed order, then writes aggregates, slopes
/// and plots. Replicates of a cell run concurrently.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let system = cfg.load_system()?;
    let settings = RunSettings::from_config(cfg, &system);
    fs::create_dir_all(&cfg.out_dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cfg.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;

    let mut writer = csv::Writer::from_writer(File::create(cfg.out_dir.join(ROWS_FILE))?);
    let mut rows = Vec::with_capacity(cfg.strategies.len() * cfg.n_grid.len() * cfg.replicates);
    for &strategy in &cfg.strategies {
        for &sizes in &cfg.sizes() {
            let cell: Vec<StrategyReport> = pool.install(|| {
                (0..cfg.replicates)
                    .into_par_iter()
                    .map(|r| {
                        let seed = cell_seed(cfg.base_seed, strategy, sizes.0, r);
                        run_strategy(&system, strategy, sizes, r, seed, &settings)
                    })
                    .collect()
            });
            for row in &cell {
                writer.serialize(row)?;
            }
            writer.flush()?;
            rows.extend(cell);
        }
    }
    writer.into_inner().map_err(|e| Error::Io(e.into_error()))?.flush()?;

    let (aggregates, slopes) = summarize(&rows);
    write_all(&cfg.out_dir.join(AGGREGATES_FILE), &aggregates)?;
    write_all(&cfg.out_dir.join(SLOPES_FILE), &slopes)?;
    let report = ExperimentReport { rows, aggregates, slopes };
    super::plot::emit_plots(&report, &cfg.out_dir)?;
    Ok(report)
}
