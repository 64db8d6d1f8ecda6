//! Runs each job as a local child process.

use std::collections::HashMap;
use std::path::Path;
use std::process::Stdio;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use tokio::process::Command;
use tokio::sync::{oneshot, watch};

use super::{AllocationMode, Backend, BackendError, JobHandle, JobSpec, JobState};
use crate::time::Nanos;

struct Slot {
    state: watch::Receiver<JobState>,
    kill: Mutex<Option<oneshot::Sender<()>>>,
}

/// Starts `job_spec.command --reg-file <path>` per submission, with `PORT`
/// removed from the environment so the server picks a free port.
///
/// A per-job process is killed at `time_limit`; a bulk process lives until
/// the allocation limit. Child stderr goes to `<reg_file>.log`.
pub struct ProcessBackend {
    spec: JobSpec,
    lifetime: Duration,
    next: AtomicU64,
    jobs: Mutex<HashMap<u64, Arc<Slot>>>,
}

impl ProcessBackend {
    /// `allocation_time_limit` bounds bulk-mode processes; per-job
    /// processes use `spec.time_limit`.
    pub fn new(spec: JobSpec, allocation_time_limit: Option<Nanos>) -> Result<Self, BackendError> {
        if spec.command.is_empty() {
            return Err(BackendError::SpawnFailure(
                "job_spec.command is empty".into(),
            ));
        }
        spec.validate()
            .map_err(|e| BackendError::SpawnFailure(e.to_string()))?;
        let lifetime = match spec.mode {
            AllocationMode::PerJob => spec.time_limit,
            AllocationMode::Bulk => allocation_time_limit.unwrap_or(spec.time_limit),
        };
        Ok(ProcessBackend {
            spec,
            lifetime: lifetime.into(),
            next: AtomicU64::new(0),
            jobs: Mutex::new(HashMap::new()),
        })
    }

    fn slot(&self, job: JobHandle) -> Result<Arc<Slot>, BackendError> {
        self.jobs
            .lock()
            .expect("job table")
            .get(&job.0)
            .cloned()
            .ok_or(BackendError::UnknownHandle(job))
    }
}

#[async_trait]
impl Backend for ProcessBackend {
    fn mode(&self) -> AllocationMode {
        self.spec.mode
    }

    async fn submit(&self, reg_file: &Path) -> Result<JobHandle, BackendError> {
        let log_path = reg_file.with_extension("log");
        let stderr = std::fs::File::create(&log_path)
            .map(Stdio::from)
            .unwrap_or_else(|_| Stdio::null());
        let mut child = Command::new(&self.spec.command[0])
            .args(&self.spec.command[1..])
            .arg("--reg-file")
            .arg(reg_file)
            .env_remove("PORT")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .kill_on_drop(true)
            .spawn()
            .map_err(|e| BackendError::SpawnFailure(format!("{}: {e}", self.spec.command[0])))?;

        let id = self.next.fetch_add(1, Ordering::Relaxed);
        let (state_tx, state_rx) = watch::channel(JobState::Running);
        let (kill_tx, kill_rx) = oneshot::channel();
        let lifetime = self.lifetime;
        tokio::spawn(async move {
            let end = tokio::select! {
                status = child.wait() => JobState::Exited(match status {
                    Ok(s) => s.to_string(),
                    Err(e) => e.to_string(),
                }),
                _ = tokio::time::sleep(lifetime) => {
                    let _ = child.kill().await;
                    JobState::TimeLimitExceeded
                }
                _ = kill_rx => {
                    let _ = child.kill().await;
                    JobState::Cancelled
                }
            };
            tracing::debug!(job = id, state = ?end, "process job ended");
            let _ = state_tx.send(end);
        });
        self.jobs.lock().expect("job table").insert(
            id,
            Arc::new(Slot {
                state: state_rx,
                kill: Mutex::new(Some(kill_tx)),
            }),
        );
        Ok(JobHandle(id))
    }

    async fn cancel(&self, job: JobHandle) -> Result<(), BackendError> {
        let slot = self.slot(job)?;
        let kill = slot.kill.lock().expect("kill switch").take();
        if let Some(kill) = kill {
            let _ = kill.send(());
            let mut rx = slot.state.clone();
            let _ =
                tokio::time::timeout(Duration::from_secs(5), rx.wait_for(JobState::is_terminal))
                    .await;
        }
        Ok(())
    }

    async fn status(&self, job: JobHandle) -> Result<JobState, BackendError> {
        Ok(self.slot(job)?.state.borrow().clone())
    }
}
