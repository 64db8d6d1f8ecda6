//! Benchmark suite definitions. Each suite names a model, the resources the
//! schedulers are asked for, a task-time distribution for the emulator and
//! the factor that maps cluster minutes to desk time.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::backends::{AllocationMode, AllocationSpec, JobSpec, SimConfig, SimSetup, Submission};
use crate::clients::ParameterBox;
use crate::dist::Distribution;
use crate::models::BenchmarkModel;
use crate::time::Nanos;

const BUILTIN: [(&str, &str); 4] = [
    (
        "eigen-100",
        include_str!("../../../../suites/eigen-100.toml"),
    ),
    (
        "eigen-5000",
        include_str!("../../../../suites/eigen-5000.toml"),
    ),
    (
        "synthetic-gs2",
        include_str!("../../../../suites/synthetic-gs2.toml"),
    ),
    ("gp", include_str!("../../../../suites/gp.toml")),
];

/// Scheduler requests, in cluster minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resources {
    pub perjob_time_limit: f64,
    pub bulk_allocation_time: f64,
    pub bulk_time_request: f64,
    pub bulk_time_limit: f64,
    pub cpus: u32,
    pub memory_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub backlog: u32,
    pub workers_per_alloc: u32,
    pub max_worker_count: u32,
}

/// Task compute times, in cluster minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub duration: Distribution,
}

/// Emulator overheads, in cluster seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSim {
    pub queue_wait: Distribution,
    pub perjob_launch_overhead: Distribution,
    pub bulk_task_overhead: Distribution,
    pub env_reinit_overhead: Distribution,
    pub server_init: f64,
    pub node_count: u32,
    /// When set, per-job environment setup is this fraction of the mean
    /// drawn task time instead of `env_reinit_overhead`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_reinit_to_task_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Desk milliseconds per cluster minute.
    pub cluster_minute_ms: f64,
    #[serde(default = "yes")]
    pub in_default_set: bool,
    pub n_evaluations: usize,
    pub depths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub model: BenchmarkModel,
    pub input: ParameterBox,
    pub resources: Resources,
    pub allocation: AllocationPolicy,
    pub workload: Workload,
    pub sim: SuiteSim,
}

fn yes() -> bool {
    true
}

impl Suite {
    pub fn builtin_names() -> Vec<&'static str> {
        BUILTIN.iter().map(|(n, _)| *n).collect()
    }

    /// Suites run when none is named.
    pub fn default_set() -> Vec<Suite> {
        BUILTIN
            .iter()
            .filter_map(|(n, _)| Suite::builtin(n).ok())
            .filter(|s| s.in_default_set)
            .collect()
    }

    pub fn builtin(name: &str) -> Result<Suite, BenchError> {
        let (_, text) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| BenchError::UnknownSuite(name.to_owned()))?;
        Suite::from_toml(text)
    }

    /// A built-in name or a path to a suite file.
    pub fn resolve(name_or_path: &str) -> Result<Suite, BenchError> {
        let path = Path::new(name_or_path);
        if path.extension().is_some_and(|e| e == "toml") || path.is_file() {
            Suite::load(path)
        } else {
            Suite::builtin(name_or_path)
        }
    }

    pub fn load(path: &Path) -> Result<Suite, BenchError> {
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        Suite::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Suite, BenchError> {
        let suite: Suite = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(format!("suite `{}`: {m}", self.name)));
        if !(self.cluster_minute_ms.is_finite() && self.cluster_minute_ms > 0.0) {
            return bad("cluster_minute_ms must be > 0".into());
        }
        if self.depths.is_empty() || self.depths.contains(&0) {
            return bad("depths must be non-empty and >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        self.input
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.workload
            .duration
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if let Some(f) = self.sim.calibrate_reinit_to_task_mean {
            if !(f.is_finite() && f >= 0.0) {
                return bad("calibrate_reinit_to_task_mean must be >= 0".into());
            }
        }
        for mode in [AllocationMode::PerJob, AllocationMode::Bulk] {
            self.job_spec(mode, true)
                .validate()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        self.allocation_spec(true)
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    /// Desk seconds per cluster minute.
    pub fn minute(&self) -> f64 {
        self.cluster_minute_ms / 1000.0
    }

    fn minutes(&self, m: f64, scaled: bool) -> Nanos {
        Nanos::from_secs_f64(m * if scaled { self.minute() } else { 60.0 })
    }

    /// Per-job mode asks for the expected maximum as both request and
    /// limit. Unscaled specs keep cluster minutes as real minutes.
    pub fn job_spec(&self, mode: AllocationMode, scaled: bool) -> JobSpec {
        let r = &self.resources;
        let (req, limit) = match mode {
            AllocationMode::PerJob => (r.perjob_time_limit, r.perjob_time_limit),
            AllocationMode::Bulk => (r.bulk_time_request, r.bulk_time_limit),
        };
        JobSpec {
            cpus: r.cpus,
            memory_gb: r.memory_gb,
            time_request: self.minutes(req, scaled),
            time_limit: self.minutes(limit, scaled),
            command: Vec::new(),
            mode,
        }
    }

    pub fn allocation_spec(&self, scaled: bool) -> AllocationSpec {
        AllocationSpec {
            allocation_time_limit: self.minutes(self.resources.bulk_allocation_time, scaled),
            backlog: self.allocation.backlog,
            workers_per_alloc: self.allocation.workers_per_alloc,
            max_worker_count: self.allocation.max_worker_count,
            renew: true,
        }
    }

    /// Task durations in desk time, drawn from `seed`.
    pub fn workload(&self, seed: u64) -> Vec<Nanos> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let d = self.workload.duration.scaled(self.minute());
        (0..self.n_evaluations)
            .map(|_| Nanos::from_secs_f64(d.sample(&mut rng)))
            .collect()
    }

    /// Task-time distribution in desk seconds.
    pub fn desk_duration(&self) -> Distribution {
        self.workload.duration.scaled(self.minute())
    }

    /// The model to serve in live runs. A synthetic model sleeps for the
    /// desk-scaled workload distribution.
    pub fn live_model(&self) -> BenchmarkModel {
        match &self.model {
            BenchmarkModel::Synthetic {
                seed, input_dim, ..
            } => BenchmarkModel::Synthetic {
                duration: self.desk_duration(),
                seed: *seed,
                input_dim: *input_dim,
            },
            other => other.clone(),
        }
    }

    /// Emulator config with overheads scaled to desk time.
    pub fn sim_config(&self, seed: u64, workload: &[Nanos]) -> SimConfig {
        let s = self.minute() / 60.0;
        let reinit = match self.sim.calibrate_reinit_to_task_mean {
            Some(f) if !workload.is_empty() => {
                let mean =
                    workload.iter().map(|d| d.as_secs_f64()).sum::<f64>() / workload.len() as f64;
                Distribution::constant(f * mean)
            }
            _ => self.sim.env_reinit_overhead.scaled(s),
        };
        SimConfig {
            queue_wait: self.sim.queue_wait.scaled(s),
            perjob_launch_overhead: self.sim.perjob_launch_overhead.scaled(s),
            bulk_task_overhead: self.sim.bulk_task_overhead.scaled(s),
            env_reinit_overhead: reinit,
            server_init: Nanos::from_secs_f64(self.sim.server_init * s),
            node_count: self.sim.node_count,
            rng_seed: seed,
            max_queued: None,
        }
    }

    /// Workload and emulator setup for one (mode, depth, seed) cell.
    pub fn sim_setup(
        &self,
        mode: AllocationMode,
        depth: usize,
        seed: u64,
    ) -> (Vec<Nanos>, SimSetup) {
        let workload = self.workload(seed);
        let setup = SimSetup {
            sim: self.sim_config(seed, &workload),
            job: self.job_spec(mode, true),
            allocation: self.allocation_spec(true),
            submission: Submission::Depth(depth),
        };
        (workload, setup)
    }
}
