//! Scheduler backends: a job-submission interface with a local-process
//! implementation, an in-process emulation for tests, and a discrete-event
//! simulator of per-job and bulk allocation.

pub mod emulated;
pub mod process;
pub mod sim;
pub mod spec;

use std::fmt;
use std::path::Path;

use async_trait::async_trait;

pub use emulated::{EmulatedBackend, EmulatedConfig};
pub use process::ProcessBackend;
pub use sim::{
    run_sim, write_outcomes_csv, JobStatus, SimError, SimJobOutcome, SimSetup, Simulator,
    Submission,
};
pub use spec::{AllocationMode, AllocationSpec, BackendConfig, JobSpec, SimConfig, SpecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct JobHandle(pub u64);

impl fmt::Display for JobHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "job-{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobState {
    Running,
    /// The job ended on its own.
    Exited(String),
    /// Killed at its time limit (per-job) or allocation limit (bulk).
    TimeLimitExceeded,
    Cancelled,
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, JobState::Running)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("spawn failed: {0}")]
    SpawnFailure(String),
    #[error("unknown job handle {0}")]
    UnknownHandle(JobHandle),
}

/// Starts model servers on request. Each submitted job runs one server
/// that announces itself by writing `host:port` to `reg_file`.
#[async_trait]
pub trait Backend: Send + Sync + 'static {
    fn mode(&self) -> AllocationMode;

    async fn submit(&self, reg_file: &Path) -> Result<JobHandle, BackendError>;

    /// Stops the job. Cancelling a job that already ended succeeds.
    async fn cancel(&self, job: JobHandle) -> Result<(), BackendError>;

    async fn status(&self, job: JobHandle) -> Result<JobState, BackendError>;
}
