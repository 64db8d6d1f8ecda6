use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::Distribution;
use crate::time::{secs, Nanos};

/// How a backend turns submissions into running servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationMode {
    /// One scheduler allocation per job (SLURM-like).
    PerJob,
    /// Persistent workers inside a few long allocations (HyperQueue-like).
    Bulk,
}

impl AllocationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocationMode::PerJob => "perjob",
            AllocationMode::Bulk => "bulk",
        }
    }
}

impl fmt::Display for AllocationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for AllocationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "perjob" | "slurm" => Ok(AllocationMode::PerJob),
            "bulk" | "hq" => Ok(AllocationMode::Bulk),
            other => Err(format!(
                "unknown allocation mode `{other}` (expected perjob or bulk)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid backend config: {0}")]
pub struct SpecError(pub String);

/// Resource request for one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub cpus: u32,
    pub memory_gb: f64,
    /// Expected runtime, used as a placement hint.
    #[serde(with = "secs")]
    pub time_request: Nanos,
    /// Hard bound after which the job is killed.
    #[serde(with = "secs")]
    pub time_limit: Nanos,
    #[serde(default)]
    pub command: Vec<String>,
    pub mode: AllocationMode,
}

impl JobSpec {
    pub fn new(mode: AllocationMode, time_request: Nanos, time_limit: Nanos) -> Self {
        JobSpec {
            cpus: 1,
            memory_gb: 4.0,
            time_request,
            time_limit,
            command: Vec::new(),
            mode,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.cpus == 0 {
            return Err(SpecError("cpus must be >= 1".into()));
        }
        if !(self.memory_gb.is_finite() && self.memory_gb > 0.0) {
            return Err(SpecError("memory_gb must be > 0".into()));
        }
        if self.time_request > self.time_limit {
            return Err(SpecError(format!(
                "time_request {} s exceeds time_limit {} s",
                self.time_request, self.time_limit
            )));
        }
        Ok(())
    }
}

/// Worker allocation policy for bulk mode, named after the `hq alloc add`
/// flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSpec {
    #[serde(with = "secs")]
    pub allocation_time_limit: Nanos,
    pub backlog: u32,
    pub workers_per_alloc: u32,
    pub max_worker_count: u32,
    /// Request further allocations after the first one expires.
    #[serde(default = "yes")]
    pub renew: bool,
}

fn yes() -> bool {
    true
}

impl AllocationSpec {
    /// `--time-limit 10m --backlog 1 --worker-per-alloc 1 --max-worker-count 1`
    pub fn single_worker(allocation_time_limit: Nanos) -> Self {
        AllocationSpec {
            allocation_time_limit,
            backlog: 1,
            workers_per_alloc: 1,
            max_worker_count: 1,
            renew: true,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.backlog == 0 || self.workers_per_alloc == 0 || self.max_worker_count == 0 {
            return Err(SpecError(
                "backlog, workers_per_alloc and max_worker_count must be >= 1".into(),
            ));
        }
        if self.workers_per_alloc > self.max_worker_count {
            return Err(SpecError(
                "workers_per_alloc exceeds max_worker_count".into(),
            ));
        }
        if self.allocation_time_limit == Nanos::ZERO {
            return Err(SpecError("allocation_time_limit must be > 0".into()));
        }
        Ok(())
    }
}

/// Scheduler emulator parameters. Distributions are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Wait between a scheduler request and its allocation.
    pub queue_wait: Distribution,
    pub perjob_launch_overhead: Distribution,
    pub bulk_task_overhead: Distribution,
    /// Environment setup paid by every per-job task, counted as compute.
    pub env_reinit_overhead: Distribution,
    /// Model server startup, counted as compute of the first task a server runs.
    #[serde(with = "secs", default = "one_second")]
    pub server_init: Nanos,
    pub node_count: u32,
    #[serde(default)]
    pub rng_seed: u64,
    /// Bound on jobs waiting for placement; `None` is unbounded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_queued: Option<usize>,
}

fn one_second() -> Nanos {
    Nanos(1_000_000_000)
}

impl SimConfig {
    /// Every overhead zero, one node.
    pub fn ideal() -> Self {
        SimConfig {
            queue_wait: Distribution::ZERO,
            perjob_launch_overhead: Distribution::ZERO,
            bulk_task_overhead: Distribution::ZERO,
            env_reinit_overhead: Distribution::ZERO,
            server_init: Nanos::ZERO,
            node_count: 1,
            rng_seed: 0,
            max_queued: None,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        for (name, d) in [
            ("queue_wait", &self.queue_wait),
            ("perjob_launch_overhead", &self.perjob_launch_overhead),
            ("bulk_task_overhead", &self.bulk_task_overhead),
            ("env_reinit_overhead", &self.env_reinit_overhead),
        ] {
            d.validate()
                .map_err(|e| SpecError(format!("{name}: {e}")))?;
        }
        if self.node_count == 0 {
            return Err(SpecError("node_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything a backend needs, as read from a TOML file with `[job_spec]`,
/// `[allocation]` and `[sim]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub job_spec: JobSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocation: Option<AllocationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimConfig>,
}

impl BackendConfig {
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let cfg: BackendConfig = toml::from_str(text).map_err(|e| SpecError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SpecError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpecError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        self.job_spec.validate()?;
        if let Some(a) = &self.allocation {
            a.validate()?;
        }
        if let Some(s) = &self.sim {
            s.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_backend_file() {
        let cfg = BackendConfig::from_toml(
            r#"
            [job_spec]
            cpus = 1
            memory_gb = 4
            time_request = 60
            time_limit = 300
            command = ["bench", "serve", "--model", "eigen"]
            mode = "bulk"

            [allocation]
            allocation_time_limit = 600
            backlog = 1
            workers_per_alloc = 1
            max_worker_count = 1

            [sim]
            queue_wait = { kind = "uniform", low = 1, high = 10 }
            perjob_launch_overhead = { kind = "constant", value = 2 }
            bulk_task_overhead = { kind = "constant", value = 0.001 }
            env_reinit_overhead = { kind = "uniform", low = 0.5, high = 2 }
            node_count = 4
            rng_seed = 7
            "#,
        )
        .unwrap();
        assert_eq!(cfg.job_spec.mode, AllocationMode::Bulk);
        assert_eq!(cfg.job_spec.time_limit, Nanos(300_000_000_000));
        assert_eq!(cfg.allocation.as_ref().unwrap().renew, true);
        assert_eq!(cfg.sim.as_ref().unwrap().server_init, Nanos(1_000_000_000));
    }

    #[test]
    fn request_above_limit_is_rejected() {
        let spec = JobSpec::new(AllocationMode::PerJob, Nanos(10), Nanos(5));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mode_names() {
        assert_eq!(
            "perjob".parse::<AllocationMode>().unwrap(),
            AllocationMode::PerJob
        );
        assert_eq!(
            "Bulk".parse::<AllocationMode>().unwrap(),
            AllocationMode::Bulk
        );
        assert!("both".parse::<AllocationMode>().is_err());
    }
}
