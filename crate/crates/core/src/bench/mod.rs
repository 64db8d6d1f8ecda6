//! Benchmark harness: runs a suite over every (mode, depth) cell, writes the
//! records and summaries to a results tree, and compares two result trees.
//!
//! Layout, one directory per cell:
//!
//! ```text
//! <out>/<suite>/<mode>/<depth>/
//!     summary.json            aggregate over seeds
//!     records-<seed>.csv      task records
//!     summary-<seed>.json     metrics summary of that run
//!     box-<seed>.csv          box statistics
//!     outcomes-<seed>.csv     emulator outcomes (emulated runs)
//!     events-<seed>.jsonl     balancer event log (live runs)
//! ```

mod compare;
mod suite;

use std::fs::{self, File};
use std::io::BufWriter;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use compare::{
    compare, compare_summaries, load_results, CompareRow, MAKESPAN_REDUCTION_FLAG,
    OVERHEAD_RATIO_FLAG,
};
pub use suite::{AllocationPolicy, Resources, Suite, SuiteSim, Workload};

use crate::backends::{
    run_sim, write_outcomes_csv, AllocationMode, Backend, EmulatedBackend, EmulatedConfig,
    JobStatus, ProcessBackend, SimError,
};
use crate::balancer::{serve_balancer, Balancer, BalancerConfig, BalancerError};
use crate::clients::{run_experiment, ExperimentPlan, ParameterSource};
use crate::metrics::{
    summarize, write_box_csv, write_records_csv, MetricsError, MetricsSummary, TaskRecord,
};
use crate::models::DEFAULT_MODEL_NAME;
use crate::time::Nanos;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("result sets do not share key `{0}`")]
    KeyMismatch(String),
    #[error("{0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Balancer(#[from] BalancerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl BenchError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
        move |source| BenchError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// What executes the evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum Launcher {
    /// The discrete-event emulator, on the suite's scaled workload.
    Sim,
    /// Real server processes: `exe serve --spec <json>` per job.
    Process { exe: PathBuf },
    /// In-process servers behind the balancer.
    Emulated,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub modes: Vec<AllocationMode>,
    /// Overrides the suite's depths.
    pub depths: Option<Vec<usize>>,
    /// Overrides the suite's seeds.
    pub seeds: Option<Vec<u64>>,
    /// Overrides the suite's evaluation count.
    pub n_evaluations: Option<usize>,
    pub out: PathBuf,
    pub launcher: Launcher,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>, launcher: Launcher) -> Self {
        RunOptions {
            modes: vec![AllocationMode::PerJob, AllocationMode::Bulk],
            depths: None,
            seeds: None,
            n_evaluations: None,
            out: out.into(),
            launcher,
        }
    }
}

/// One run of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub complete: bool,
    pub n_records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Most evaluations the client had outstanding at once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    /// Informational queries the balancer sent before its first dispatch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preflight_queries: Option<usize>,
    /// Wall-clock seconds the run took.
    pub wall_secs: f64,
}

/// Aggregate of one (suite, mode, depth) cell, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub suite: String,
    pub mode: AllocationMode,
    pub depth: usize,
    pub launcher: String,
    pub complete: bool,
    /// Means over the completed runs, seconds.
    pub makespan: f64,
    pub overhead: f64,
    pub total_cpu: f64,
    pub slr: Option<f64>,
    pub mean_task_overhead: f64,
    #[serde(default)]
    pub mean_task_slr: Option<f64>,
    pub runs: Vec<RunSummary>,
}

impl ExperimentSummary {
    fn from_runs(
        suite: &str,
        mode: AllocationMode,
        depth: usize,
        launcher: &str,
        runs: Vec<RunSummary>,
    ) -> Self {
        let ok: Vec<&MetricsSummary> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let mean = |f: &dyn Fn(&MetricsSummary) -> f64| {
            if ok.is_empty() {
                0.0
            } else {
                ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
            }
        };
        let avg = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        ExperimentSummary {
            suite: suite.to_owned(),
            mode,
            depth,
            launcher: launcher.to_owned(),
            complete: runs.iter().all(|r| r.complete),
            makespan: mean(&|m| m.makespan),
            overhead: mean(&|m| m.overhead),
            total_cpu: mean(&|m| m.total_cpu),
            slr: avg(ok.iter().filter_map(|m| m.slr).collect()),
            mean_task_overhead: mean(&|m| m.mean_task_overhead),
            mean_task_slr: avg(ok.iter().filter_map(|m| m.mean_task_slr).collect()),
            runs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub cells: Vec<(PathBuf, ExperimentSummary)>,
}

impl SuiteReport {
    pub fn all_complete(&self) -> bool {
        self.cells.iter().all(|(_, s)| s.complete)
    }

    pub fn cell(&self, mode: AllocationMode, depth: usize) -> Option<&ExperimentSummary> {
        self.cells
            .iter()
            .map(|(_, s)| s)
            .find(|s| s.mode == mode && s.depth == depth)
    }
}

/// Path of one cell inside a results tree.
pub fn cell_dir(out: &Path, suite: &str, mode: AllocationMode, depth: usize) -> PathBuf {
    out.join(suite).join(mode.as_str()).join(depth.to_string())
}

/// Runs every cell of `suite` one after another. A failed run is recorded
/// in its summary and the suite carries on.
pub async fn run_suite(suite: &Suite, opts: &RunOptions) -> Result<SuiteReport, BenchError> {
    let mut suite = suite.clone();
    if let Some(n) = opts.n_evaluations {
        suite.n_evaluations = n;
    }
    let depths = opts.depths.clone().unwrap_or_else(|| suite.depths.clone());
    let seeds = opts.seeds.clone().unwrap_or_else(|| suite.seeds.clone());
    if depths.is_empty() || depths.contains(&0) || seeds.is_empty() || opts.modes.is_empty() {
        return Err(BenchError::Config(
            "modes, depths and seeds must be non-empty; depths >= 1".into(),
        ));
    }
    let launcher = match opts.launcher {
        Launcher::Sim => "sim",
        Launcher::Process { .. } => "process",
        Launcher::Emulated => "emulated",
    };
    let mut cells = Vec::new();
    for &mode in &opts.modes {
        for &depth in &depths {
            let dir = cell_dir(&opts.out, &suite.name, mode, depth);
            fs::create_dir_all(&dir).map_err(BenchError::io(&dir))?;
            let mut runs = Vec::new();
            for &seed in &seeds {
                tracing::info!(suite = %suite.name, %mode, depth, seed, launcher, "run");
                let started = Instant::now();
                let mut run = match &opts.launcher {
                    Launcher::Sim => sim_cell(&suite, mode, depth, seed, &dir)?,
                    live => live_cell(&suite, mode, depth, seed, &dir, live).await?,
                };
                run.wall_secs = started.elapsed().as_secs_f64();
                runs.push(run);
            }
            let summary = ExperimentSummary::from_runs(&suite.name, mode, depth, launcher, runs);
            write_json(&dir.join("summary.json"), &summary)?;
            cells.push((dir, summary));
        }
    }
    Ok(SuiteReport { cells })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| BenchError::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(BenchError::io(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(BenchError::io(path))
}

fn write_run_files(
    dir: &Path,
    seed: u64,
    records: &[TaskRecord],
    summary: &MetricsSummary,
) -> Result<(), BenchError> {
    write_records_csv(create(&dir.join(format!("records-{seed}.csv")))?, records)?;
    write_box_csv(create(&dir.join(format!("box-{seed}.csv")))?, summary)?;
    write_json(&dir.join(format!("summary-{seed}.json")), summary)
}

/// Emulated run of one cell.
pub fn sim_cell(
    suite: &Suite,
    mode: AllocationMode,
    depth: usize,
    seed: u64,
    dir: &Path,
) -> Result<RunSummary, BenchError> {
    let (workload, setup) = suite.sim_setup(mode, depth, seed);
    let outcomes = run_sim(&workload, &setup)?;
    let path = dir.join(format!("outcomes-{seed}.csv"));
    write_outcomes_csv(create(&path)?, &outcomes).map_err(BenchError::io(&path))?;
    let complete = outcomes.len() == workload.len()
        && outcomes.iter().all(|o| o.status == JobStatus::Completed);
    let records: Vec<TaskRecord> = outcomes.iter().map(|o| o.to_task_record()).collect();
    let mut run = RunSummary {
        seed,
        complete,
        n_records: records.len(),
        metrics: None,
        error: None,
        max_in_flight: None,
        preflight_queries: None,
        wall_secs: 0.0,
    };
    match summarize(&records, None) {
        Ok(summary) => {
            write_run_files(dir, seed, &records, &summary)?;
            run.metrics = Some(summary);
        }
        Err(e) => run.error = Some(e.to_string()),
    }
    if !complete && run.error.is_none() {
        run.error = Some(format!(
            "{} of {} tasks completed in time",
            completed(&outcomes),
            workload.len()
        ));
    }
    Ok(run)
}

fn completed(outcomes: &[crate::backends::SimJobOutcome]) -> usize {
    outcomes
        .iter()
        .filter(|o| o.status == JobStatus::Completed)
        .count()
}

/// Live run of one cell: balancer, backend and real servers.
async fn live_cell(
    suite: &Suite,
    mode: AllocationMode,
    depth: usize,
    seed: u64,
    dir: &Path,
    launcher: &Launcher,
) -> Result<RunSummary, BenchError> {
    let model = suite.live_model();
    let job = suite.job_spec(mode, false);
    let alloc = suite.allocation_spec(false);
    let backend: Arc<dyn Backend> = match launcher {
        Launcher::Process { exe } => {
            let spec_json =
                serde_json::to_string(&model).map_err(|e| BenchError::Config(e.to_string()))?;
            let mut job = job.clone();
            job.command = vec![
                exe.display().to_string(),
                "serve".into(),
                "--spec".into(),
                spec_json,
                "--name".into(),
                DEFAULT_MODEL_NAME.into(),
            ];
            let limit = (mode == AllocationMode::Bulk).then_some(alloc.allocation_time_limit);
            Arc::new(
                ProcessBackend::new(job, limit).map_err(|e| BenchError::Config(e.to_string()))?,
            )
        }
        _ => {
            let mut cfg = EmulatedConfig::new(model, mode);
            cfg.seed = seed;
            Arc::new(EmulatedBackend::new(cfg))
        }
    };
    let reg_dir = dir.join(format!("servers-{seed}"));
    let mut cfg = BalancerConfig::new(&reg_dir);
    cfg.max_servers = depth;
    cfg.eval_timeout = job.time_limit.into();
    cfg.event_log = Some(dir.join(format!("events-{seed}.jsonl")));
    let balancer = Balancer::new(cfg, backend)?;
    let front = serve_balancer(
        balancer.clone(),
        SocketAddr::new(Ipv4Addr::LOCALHOST.into(), 0),
    )
    .await
    .map_err(|e| BenchError::Config(format!("balancer front: {e}")))?;

    let mut plan = ExperimentPlan::new(
        front.url(),
        ParameterSource::Lhs {
            bx: suite.input.clone(),
            jitter: false,
        },
    );
    plan.n_evaluations = suite.n_evaluations;
    plan.queue_depth = depth;
    plan.seed = seed;
    plan.timeout = job.time_limit + Nanos::from(Duration::from_secs(60));
    let outcome = run_experiment(&plan)
        .await
        .map_err(|e| BenchError::Config(e.to_string()));
    front.shutdown().await;
    balancer.shutdown().await;
    let outcome = outcome?;

    let preflight = preflight_before_first_dispatch(&balancer.log().entries());
    let mut run = RunSummary {
        seed,
        complete: !outcome.incomplete && outcome.completed() == suite.n_evaluations,
        n_records: outcome.records.len(),
        metrics: None,
        error: outcome
            .failures
            .first()
            .map(|f| format!("task {}: {}", f.task_id, f.error)),
        max_in_flight: Some(outcome.max_in_flight),
        preflight_queries: Some(preflight),
        wall_secs: 0.0,
    };
    if !outcome.records.is_empty() {
        let summary = summarize(&outcome.records, Some(outcome.wall_span))?;
        write_run_files(dir, seed, &outcome.records, &summary)?;
        run.metrics = Some(summary);
    }
    Ok(run)
}

/// Number of `preflight_query` events logged before the first `dispatch`.
pub fn preflight_before_first_dispatch(entries: &[crate::balancer::LogEntry]) -> usize {
    entries
        .iter()
        .take_while(|e| e.event != "dispatch")
        .filter(|e| e.event == "preflight_query")
        .count()
}
