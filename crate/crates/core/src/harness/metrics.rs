use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algorithm, RunConfig};
use crate::error::{Error, Result};

/// One evaluation of the current policy on the current phase's levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    /// 1-based.
    pub phase: usize,
    /// Steps since the phase began.
    pub phase_step: u64,
    pub mean_return: f64,
    pub stderr: f64,
    /// Mean active checkpoints per rollout step since the previous point (HOP only).
    pub active_checkpoint_count_mean: Option<f64>,
    pub num_checkpoints: usize,
    /// Phase-1 evaluation while in a later phase, when requested.
    pub phase1_mean_return: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub points: Vec<EvalPoint>,
}

/// Steps into phase 3 until the mean evaluation return first reaches the
/// best phase-1 mean; `None` if it never does.
pub fn steps_to_return(report: &MetricsReport) -> Option<u64> {
    let peak = report
        .points
        .iter()
        .filter(|p| p.phase == 1)
        .map(|p| p.mean_return)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))?;
    report
        .points
        .iter()
        .find(|p| p.phase == 3 && p.mean_return >= peak)
        .map(|p| p.phase_step)
}

/// Mean evaluation return at the last evaluation point.
pub fn final_rewards(report: &MetricsReport) -> Option<f64> {
    report.points.last().map(|p| p.mean_return)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!("unknown export format `{other}`"))),
        }
    }
}

/// Derived scalars of one run, with the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub experiment: String,
    pub seed: u64,
    pub evaluation_points: usize,
    pub phase1_peak: Option<f64>,
    /// `null` when phase 3 never regained the phase-1 peak.
    pub steps_to_return: Option<u64>,
    pub final_reward: Option<f64>,
    pub config: RunConfig,
}

impl RunSummary {
    pub fn new(report: &MetricsReport, config: &RunConfig) -> Self {
        Self {
            algorithm: config.algorithm,
            experiment: config.experiment.clone(),
            seed: config.seed,
            evaluation_points: report.points.len(),
            phase1_peak: report
                .points
                .iter()
                .filter(|p| p.phase == 1)
                .map(|p| p.mean_return)
                .reduce(f64::max),
            steps_to_return: steps_to_return(report),
            final_reward: final_rewards(report),
            config: config.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    step: u64,
    phase: usize,
    phase_step: u64,
    mean_return: f64,
    stderr: f64,
    active_checkpoint_count_mean: Option<f64>,
    num_checkpoints: usize,
    phase1_mean_return: Option<f64>,
}

/// Writes `metrics.csv` or `summary.json` into `dir`.
pub fn export_metrics(report: &MetricsReport, config: &RunConfig, dir: &Path, format: ExportFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ExportFormat::Csv => {
            let path = dir.join("metrics.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            if report.points.is_empty() {
                w.write_record([
                    "step",
                    "phase",
                    "phase_step",
                    "mean_return",
                    "stderr",
                    "active_checkpoint_count_mean",
                    "num_checkpoints",
                    "phase1_mean_return",
                ])
                .map_err(|e| csv_error(&path, e))?;
            }
            for p in &report.points {
                w.serialize(CsvRow {
                    step: p.step,
                    phase: p.phase,
                    phase_step: p.phase_step,
                    mean_return: p.mean_return,
                    stderr: p.stderr,
                    active_checkpoint_count_mean: p.active_checkpoint_count_mean,
                    num_checkpoints: p.num_checkpoints,
                    phase1_mean_return: p.phase1_mean_return,
                })
                .map_err(|e| csv_error(&path, e))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        }
        ExportFormat::Json => {
            let path = dir.join("summary.json");
            let summary = RunSummary::new(report, config);
            fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| Error::io(&path, e))
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Reads a `metrics.csv` written by [`export_metrics`].
pub fn import_metrics(path: &Path) -> Result<MetricsReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut points = Vec::new();
    for row in r.deserialize() {
        let row: CsvRow = row.map_err(|e| csv_error(path, e))?;
        points.push(EvalPoint {
            step: row.step,
            phase: row.phase,
            phase_step: row.phase_step,
            mean_return: row.mean_return,
            stderr: row.stderr,
            active_checkpoint_count_mean: row.active_checkpoint_count_mean,
            num_checkpoints: row.num_checkpoints,
            phase1_mean_return: row.phase1_mean_return,
        });
    }
    Ok(MetricsReport { points })
}

/// Cross-seed statistics for one algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub final_reward_mean: f64,
    pub final_reward_stderr: f64,
    /// Per seed, in the order of `seeds`.
    pub steps_to_return: Vec<Option<u64>>,
    pub steps_to_return_reached: usize,
    /// Mean over the seeds that regained the peak.
    pub steps_to_return_mean: Option<f64>,
    /// `(step, mean, stderr)` across seeds for every shared evaluation step.
    pub curve: Vec<(u64, f64, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub algorithms: Vec<AlgorithmSummary>,
}

fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Groups exported runs by algorithm; each directory must hold a
/// `metrics.csv` and a `summary.json`.
pub fn aggregate(run_dirs: &[&Path]) -> Result<AggregateReport> {
    let mut groups: BTreeMap<&'static str, Vec<(RunSummary, MetricsReport)>> = BTreeMap::new();
    for dir in run_dirs {
        let path = dir.join("summary.json");
        let summary: RunSummary = serde_json::from_slice(&fs::read(&path).map_err(|e| Error::io(&path, e))?)?;
        let report = import_metrics(&dir.join("metrics.csv"))?;
        groups.entry(summary.algorithm.name()).or_default().push((summary, report));
    }
    let mut out = AggregateReport::default();
    for runs in groups.into_values() {
        let finals: Vec<f64> = runs.iter().filter_map(|(_, r)| final_rewards(r)).collect();
        let (final_reward_mean, final_reward_stderr) = mean_stderr(&finals);
        let str_: Vec<Option<u64>> = runs.iter().map(|(_, r)| steps_to_return(r)).collect();
        let reached: Vec<f64> = str_.iter().flatten().map(|&s| s as f64).collect();
        let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (_, r) in &runs {
            for p in &r.points {
                by_step.entry(p.step).or_default().push(p.mean_return);
            }
        }
        let curve = by_step
            .into_iter()
            .filter(|(_, v)| v.len() == runs.len())
            .map(|(s, v)| {
                let (m, e) = mean_stderr(&v);
                (s, m, e)
            })
            .collect();
        out.algorithms.push(AlgorithmSummary {
            algorithm: runs[0].0.algorithm,
            runs: runs.len(),
            seeds: runs.iter().map(|(s, _)| s.seed).collect(),
            final_reward_mean,
            final_reward_stderr,
            steps_to_return_reached: reached.len(),
            steps_to_return_mean: (!reached.is_empty()).then(|| reached.iter().sum::<f64>() / reached.len() as f64),
            steps_to_return: str_,
            curve,
        });
    }
    Ok(out)
}
