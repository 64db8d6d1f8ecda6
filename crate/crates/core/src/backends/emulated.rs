//! Backend that runs every "job" as an in-process model server, after a
//! drawn startup delay. Jobs can be killed abruptly to emulate crashes.

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::task::JoinHandle;

use super::{AllocationMode, Backend, BackendError, JobHandle, JobState};
use crate::dist::Distribution;
use crate::models::{serve_benchmark, BenchmarkModel, DEFAULT_MODEL_NAME};
use crate::protocol::ServerHandle;

#[derive(Debug, Clone)]
pub struct EmulatedConfig {
    pub model: BenchmarkModel,
    pub name: String,
    pub mode: AllocationMode,
    /// Delay before the server starts listening, in seconds.
    pub startup: Distribution,
    pub seed: u64,
    /// Server lifetime; `None` runs until cancelled.
    pub lifetime: Option<Duration>,
}

impl EmulatedConfig {
    pub fn new(model: BenchmarkModel, mode: AllocationMode) -> Self {
        EmulatedConfig {
            model,
            name: DEFAULT_MODEL_NAME.to_owned(),
            mode,
            startup: Distribution::ZERO,
            seed: 0,
            lifetime: None,
        }
    }
}

struct Job {
    state: JobState,
    server: Option<ServerHandle>,
    task: Option<JoinHandle<()>>,
}

type Jobs = Arc<Mutex<BTreeMap<u64, Job>>>;

pub struct EmulatedBackend {
    cfg: EmulatedConfig,
    rng: Mutex<ChaCha8Rng>,
    next: AtomicU64,
    jobs: Jobs,
    fail_next: AtomicU32,
}

impl EmulatedBackend {
    pub fn new(cfg: EmulatedConfig) -> Self {
        EmulatedBackend {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(cfg.seed)),
            cfg,
            next: AtomicU64::new(0),
            jobs: Arc::new(Mutex::new(BTreeMap::new())),
            fail_next: AtomicU32::new(0),
        }
    }

    /// The next `n` jobs exit immediately without registering.
    pub fn fail_next_spawns(&self, n: u32) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    pub fn submitted(&self) -> u64 {
        self.next.load(Ordering::SeqCst)
    }

    /// Jobs whose server is up.
    pub fn live_jobs(&self) -> Vec<JobHandle> {
        let jobs = self.jobs.lock().expect("jobs");
        jobs.iter()
            .filter(|(_, j)| j.server.is_some())
            .map(|(id, _)| JobHandle(*id))
            .collect()
    }

    /// Tears down the job's server and all its connections at once, the way
    /// a crashed process would. Returns whether there was a server to kill.
    pub fn kill(&self, job: JobHandle) -> bool {
        let mut jobs = self.jobs.lock().expect("jobs");
        let Some(j) = jobs.get_mut(&job.0) else {
            return false;
        };
        let Some(server) = j.server.take() else {
            return false;
        };
        if let Some(task) = j.task.take() {
            task.abort();
        }
        server.kill();
        j.state = JobState::Exited("killed".into());
        true
    }
}

fn finish(jobs: &Jobs, id: u64, state: JobState) {
    if let Some(j) = jobs.lock().expect("jobs").get_mut(&id) {
        if !j.state.is_terminal() {
            j.state = state;
        }
        if let Some(server) = j.server.take() {
            server.kill();
        }
    }
}

#[async_trait]
impl Backend for EmulatedBackend {
    fn mode(&self) -> AllocationMode {
        self.cfg.mode
    }

    async fn submit(&self, reg_file: &Path) -> Result<JobHandle, BackendError> {
        let id = self.next.fetch_add(1, Ordering::SeqCst);
        let fail = self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        let delay =
            Duration::from_secs_f64(self.cfg.startup.sample(&mut *self.rng.lock().expect("rng")));
        self.jobs.lock().expect("jobs").insert(
            id,
            Job {
                state: JobState::Running,
                server: None,
                task: None,
            },
        );

        let jobs = self.jobs.clone();
        let model = self.cfg.model.clone();
        let name = self.cfg.name.clone();
        let lifetime = self.cfg.lifetime;
        let reg_file: PathBuf = reg_file.to_owned();
        let task = tokio::spawn(async move {
            if fail {
                finish(&jobs, id, JobState::Exited("exit status: 1".into()));
                return;
            }
            tokio::time::sleep(delay).await;
            match serve_benchmark(&model, &name, IpAddr::V4(Ipv4Addr::LOCALHOST), &reg_file).await {
                Ok(server) => {
                    if let Some(j) = jobs.lock().expect("jobs").get_mut(&id) {
                        j.server = Some(server);
                    }
                }
                Err(e) => {
                    finish(&jobs, id, JobState::Exited(e.to_string()));
                    return;
                }
            }
            if let Some(limit) = lifetime {
                tokio::time::sleep(limit.saturating_sub(delay)).await;
                finish(&jobs, id, JobState::TimeLimitExceeded);
            }
        });
        if let Some(j) = self.jobs.lock().expect("jobs").get_mut(&id) {
            if !task.is_finished() {
                j.task = Some(task);
            }
        }
        Ok(JobHandle(id))
    }

    async fn cancel(&self, job: JobHandle) -> Result<(), BackendError> {
        let mut jobs = self.jobs.lock().expect("jobs");
        let j = jobs
            .get_mut(&job.0)
            .ok_or(BackendError::UnknownHandle(job))?;
        if let Some(task) = j.task.take() {
            task.abort();
        }
        if let Some(server) = j.server.take() {
            server.kill();
        }
        if !j.state.is_terminal() {
            j.state = JobState::Cancelled;
        }
        Ok(())
    }

    async fn status(&self, job: JobHandle) -> Result<JobState, BackendError> {
        let jobs = self.jobs.lock().expect("jobs");
        jobs.get(&job.0)
            .map(|j| j.state.clone())
            .ok_or(BackendError::UnknownHandle(job))
    }
}
