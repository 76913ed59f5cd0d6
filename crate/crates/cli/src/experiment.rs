//! Runs every (sweep cell, seed) pair of a config and writes traces,
//! per-cell summaries and, on failure, an error manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! <cell>/seed_<seed>.csv    one trace per run
//! <cell>/summary.json       per-cell summary, written when every seed finished
//! errors.json               only when some run diverged
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mtl_balance::metrics::{delta_p, summarize_runs, Metric, MetricTable, TaskMetrics};
use mtl_balance::tasks::TaskSet;
use mtl_balance::trainer::{train, RunTrace};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Cell, ExperimentConfig, TaskSpec};

pub const TRACE_HEADER: [&str; 6] = [
    "step",
    "task",
    "loss",
    "ema_grad_norm",
    "alpha",
    "agg_grad_norm",
];
pub const THREADS_ENV: &str = "MTL_BALANCE_THREADS";

#[derive(Debug)]
pub enum RunError {
    /// The config cannot be executed (bad task parameters, unwritable output).
    Config(String),
    /// At least one run diverged; the manifest lists them.
    Divergence { manifest: PathBuf, failures: usize },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "{m}"),
            RunError::Divergence { manifest, failures } => {
                write!(f, "{failures} run(s) diverged; see {}", manifest.display())
            }
        }
    }
}

impl std::error::Error for RunError {}

fn io_error(path: &Path, e: io::Error) -> RunError {
    RunError::Config(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_losses: Vec<f64>,
    pub stl_losses: Vec<f64>,
    pub delta_p_per_task: Vec<f64>,
    pub delta_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub method: String,
    pub alpha: String,
    pub beta: f64,
    pub task_kind: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedResult>,
    pub final_losses: Vec<MeanStd>,
    pub delta_p: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedRun {
    pub cell: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summaries: Vec<CellSummary>,
    pub trace_files: Vec<PathBuf>,
}

/// Thread count from `MTL_BALANCE_THREADS`; 0 lets rayon pick.
pub fn threads_from_env() -> Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")),
        _ => Ok(0),
    }
}

fn task_kind(config: &ExperimentConfig) -> &'static str {
    match config.task {
        TaskSpec::Quadratic(_) => "quadratic",
        TaskSpec::Mlp(_) => "mlp",
    }
}

/// Writes one trace as CSV: a row per (step, task) and a `task = all` row
/// per step carrying only the step-level columns.
pub fn write_trace<W: io::Write>(trace: &RunTrace, sink: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(TRACE_HEADER)?;
    let num = |x: f64| format!("{x:.16e}");
    for r in &trace.records {
        let step = r.step.to_string();
        let alpha = num(r.alpha);
        let agg = num(r.agg_grad_norm);
        for (t, (loss, norm)) in r.losses.iter().zip(&r.task_grad_norms).enumerate() {
            w.write_record([
                step.as_str(),
                &t.to_string(),
                &num(*loss),
                &num(*norm),
                &alpha,
                &agg,
            ])?;
        }
        w.write_record([step.as_str(), "all", "", "", &alpha, &agg])?;
    }
    w.flush()?;
    Ok(())
}

fn loss_table(losses: &[f64]) -> MetricTable {
    MetricTable {
        tasks: losses
            .iter()
            .enumerate()
            .map(|(t, &l)| {
                TaskMetrics::new(format!("task{t}"), vec![Metric::new("loss", l, false)])
            })
            .collect(),
    }
}

/// Single-task reference loss of every task for one seed's budget.
fn stl_losses(config: &ExperimentConfig, ts: &TaskSet, seed: u64) -> mtl_balance::Result<Vec<f64>> {
    let cell = config.cells()[0];
    let budget = config.train_config(&cell, seed);
    (0..ts.task_count())
        .map(|t| ts.stl_reference(t, &budget).map(|r| r.loss))
        .collect()
}

/// Trace path and final losses, or the training error.
type JobResult = Result<(PathBuf, Vec<f64>), String>;

pub fn run_experiment(
    config: &ExperimentConfig,
    threads: usize,
    quiet: bool,
) -> Result<Outcome, RunError> {
    let ts = config
        .task_set()
        .map_err(|e| RunError::Config(format!("task: {e}")))?;
    let out = config.out.clone();
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let manifest = out.join("errors.json");
    match fs::remove_file(&manifest) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_error(&manifest, e)),
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;

    let cells = config.cells();
    for cell in &cells {
        let dir = out.join(cell.name());
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    }

    let stl: Vec<Result<Vec<f64>, String>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                stl_losses(config, &ts, seed).map_err(|e| format!("single-task reference: {e}"))
            })
            .collect()
    });

    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| config.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Result<JobResult, RunError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let trace = match train(&config.train_config(cell, seed), &ts) {
                    Ok(t) => t,
                    Err(e) => return Ok(Err(e.to_string())),
                };
                let path = out.join(cell.name()).join(format!("seed_{seed}.csv"));
                let file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
                write_trace(&trace, io::BufWriter::new(file))
                    .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
                if !quiet {
                    println!(
                        "{} seed {seed}: final losses {:?}",
                        cell.name(),
                        trace.final_losses
                    );
                }
                Ok(Ok((path, trace.final_losses)))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut trace_files = Vec::new();
    let mut summaries = Vec::new();
    let mut results = results.into_iter();
    for cell in &cells {
        let mut runs = Vec::new();
        let mut complete = true;
        for (si, &seed) in config.seeds.iter().enumerate() {
            let fail = |error: String| FailedRun {
                cell: cell.name(),
                seed,
                error,
            };
            match results.next().expect("one result per job")? {
                Ok((path, final_losses)) => {
                    trace_files.push(path);
                    match &stl[si] {
                        Ok(stl_losses) => match seed_result(seed, final_losses, stl_losses) {
                            Ok(r) => runs.push(r),
                            Err(e) => {
                                complete = false;
                                failures.push(fail(e));
                            }
                        },
                        Err(e) => {
                            complete = false;
                            failures.push(fail(e.clone()));
                        }
                    }
                }
                Err(e) => {
                    complete = false;
                    failures.push(fail(e));
                }
            }
        }
        if complete {
            let summary = summarize(config, cell, runs);
            let path = out.join(cell.name()).join("summary.json");
            let text = serde_json::to_string_pretty(&summary).expect("summaries serialize") + "\n";
            fs::write(&path, text).map_err(|e| io_error(&path, e))?;
            if !quiet {
                println!(
                    "{}: Δp {:+.3} ± {:.3}",
                    summary.cell, summary.delta_p.mean, summary.delta_p.std
                );
            }
            summaries.push(summary);
        }
    }

    if !failures.is_empty() {
        let text = serde_json::to_string_pretty(&failures).expect("manifest serializes") + "\n";
        fs::write(&manifest, text).map_err(|e| io_error(&manifest, e))?;
        return Err(RunError::Divergence {
            manifest,
            failures: failures.len(),
        });
    }
    Ok(Outcome {
        out_dir: out,
        summaries,
        trace_files,
    })
}

fn seed_result(seed: u64, final_losses: Vec<f64>, stl: &[f64]) -> Result<SeedResult, String> {
    let d = delta_p(&loss_table(stl), &loss_table(&final_losses)).map_err(|e| e.to_string())?;
    Ok(SeedResult {
        seed,
        final_losses,
        stl_losses: stl.to_vec(),
        delta_p_per_task: d.per_task,
        delta_p: d.overall,
    })
}

fn mean_std(values: &[f64]) -> MeanStd {
    let (mean, std) = summarize_runs(values).expect("at least one seed");
    MeanStd { mean, std }
}

fn summarize(config: &ExperimentConfig, cell: &Cell, runs: Vec<SeedResult>) -> CellSummary {
    let tasks = runs[0].final_losses.len();
    let final_losses = (0..tasks)
        .map(|t| mean_std(&runs.iter().map(|r| r.final_losses[t]).collect::<Vec<_>>()))
        .collect();
    let delta = mean_std(&runs.iter().map(|r| r.delta_p).collect::<Vec<_>>());
    CellSummary {
        cell: cell.name(),
        method: cell.method.name().to_string(),
        alpha: cell.alpha.name().to_string(),
        beta: cell.beta,
        task_kind: task_kind(config).to_string(),
        seeds: config.seeds.clone(),
        runs,
        final_losses,
        delta_p: delta,
    }
}
