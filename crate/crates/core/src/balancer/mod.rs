//! The load balancer: a first-come-first-served queue in front of a pool of
//! model servers that it starts, registers, health-checks and retires
//! through a [`Backend`].
//!
//! Endpoint lifecycle:
//!
//! ```text
//! Spawning -> Registering -> Ready <-> Busy
//!     any -> Unhealthy -> Retired
//! ```
//!
//! All queue and registry changes happen under one lock, and the dispatch
//! decision is taken in a single place ([`Inner::pump`]) after every change.

mod events;
mod front;
mod registration;

use std::collections::{BTreeMap, VecDeque};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{oneshot, Notify};
use tokio::task::JoinHandle;

pub use events::{EventLog, LogEntry};
pub use front::serve_balancer;
pub use registration::{preflight, register_from_file, Expectation, RegistrationOptions};

use crate::backends::{AllocationMode, Backend, JobHandle};
use crate::metrics::TaskRecord;
use crate::models::DEFAULT_MODEL_NAME;
use crate::protocol::{
    codes, decode_request, encode_response, health_check, EvaluationRequest, EvaluationResponse,
    Health, ModelDescriptor, ProtocolError, RawReply, Transport,
};
use crate::time::Nanos;

#[derive(Debug, thiserror::Error)]
pub enum BalancerError {
    #[error("registration file did not appear within {0:?}")]
    RegistrationTimeout(Duration),
    #[error("registered server is unreachable: {0}")]
    UnreachableServer(String),
    #[error("server does not match the expected model: {0}")]
    PreflightMismatch(String),
    #[error("{0}")]
    SpawnFailure(String),
    #[error("queue is full ({0} waiting)")]
    NoCapacity(usize),
    #[error("upstream failure: {0}")]
    UpstreamFailure(String),
    #[error("invalid balancer config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct BalancerConfig {
    /// Model the pool serves; servers must advertise it.
    pub model_name: String,
    pub max_servers: usize,
    pub health_period: Duration,
    pub health_timeout: Duration,
    pub registration_timeout: Duration,
    pub registration_poll: Duration,
    /// Waiting requests beyond this are refused with `NoCapacity`.
    pub queue_bound: Option<usize>,
    /// Extra attempts on another server after a transport failure.
    pub retries: u32,
    /// Failed spawns in a row after which all waiting requests fail.
    pub max_consecutive_spawn_failures: u32,
    /// Directory for registration files.
    pub reg_dir: PathBuf,
    /// Upper bound on one evaluation; exceeding it cancels the server's job.
    pub eval_timeout: Duration,
    pub expected_input_sizes: Option<Vec<usize>>,
    pub expected_output_sizes: Option<Vec<usize>>,
    /// Mirror of the event log as JSON lines.
    pub event_log: Option<PathBuf>,
}

impl BalancerConfig {
    pub fn new(reg_dir: impl Into<PathBuf>) -> Self {
        BalancerConfig {
            model_name: DEFAULT_MODEL_NAME.to_owned(),
            max_servers: 1,
            health_period: Duration::from_secs(5),
            health_timeout: Duration::from_secs(2),
            registration_timeout: Duration::from_secs(60),
            registration_poll: Duration::from_millis(250),
            queue_bound: None,
            retries: 1,
            max_consecutive_spawn_failures: 3,
            reg_dir: reg_dir.into(),
            eval_timeout: Duration::from_secs(300),
            expected_input_sizes: None,
            expected_output_sizes: None,
            event_log: None,
        }
    }

    pub fn validate(&self) -> Result<(), BalancerError> {
        if self.max_servers == 0 {
            return Err(BalancerError::Config("max_servers must be >= 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(BalancerError::Config("model_name is empty".into()));
        }
        if self.health_period.is_zero() || self.registration_poll.is_zero() {
            return Err(BalancerError::Config("periods must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointState {
    Spawning,
    Registering,
    Ready,
    Busy,
    Unhealthy,
    Retired,
}

/// A model server instance known to the balancer.
#[derive(Debug, Clone, Serialize)]
pub struct ServerEndpoint {
    pub id: u64,
    pub address: Option<String>,
    pub state: EndpointState,
    pub backend_job_id: Option<u64>,
    pub descriptor: Option<ModelDescriptor>,
    pub last_health_ok: Option<Nanos>,
    pub registered_at: Option<Nanos>,
    pub evaluations: u64,
    #[serde(skip)]
    reg_file: PathBuf,
    #[serde(skip)]
    in_flight: u32,
}

impl ServerEndpoint {
    fn is_live(&self) -> bool {
        !matches!(
            self.state,
            EndpointState::Retired | EndpointState::Unhealthy
        )
    }

    fn url(&self) -> String {
        format!("http://{}", self.address.as_deref().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    /// The server answered with an error body, forwarded as is.
    RemoteError,
    UpstreamFailure,
    NoCapacity,
}

/// Timestamps of one request through the balancer, relative to its start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub seq: u64,
    pub arrival: Nanos,
    pub first_dispatch: Option<Nanos>,
    pub dispatch: Option<Nanos>,
    pub completion: Nanos,
    pub endpoint: Option<u64>,
    pub attempts: u32,
    pub outcome: Outcome,
    /// Evaluation time reported by the server.
    pub compute: Option<Nanos>,
}

impl DispatchRecord {
    /// As a metrics record: submitted on arrival, started on dispatch.
    pub fn to_task_record(&self) -> TaskRecord {
        let start = self.dispatch.unwrap_or(self.completion);
        TaskRecord {
            task_id: self.seq,
            submit_t: self.arrival,
            start_t: start,
            end_t: self.completion,
            cpu_time: self.compute.unwrap_or(self.completion - start),
            alloc_t: None,
        }
    }
}

/// What the HTTP front sends back for one evaluate call.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: Bytes,
    pub compute: Option<Duration>,
}

impl Reply {
    fn error(status: u16, code: &str, message: impl Into<String>) -> Reply {
        Reply {
            status,
            body: Bytes::from(encode_response(&EvaluationResponse::error(code, message))),
            compute: None,
        }
    }

    fn from_protocol(err: &ProtocolError) -> Reply {
        Reply::error(400, err.code(), err.to_string())
    }

    pub fn into_result(self) -> Result<Vec<Vec<f64>>, ProtocolError> {
        crate::protocol::decode_response(&self.body)?.into_result()
    }
}

struct Pending {
    seq: u64,
    body: Bytes,
    arrival: Nanos,
    first_dispatch: Option<Nanos>,
    attempts: u32,
    reply: oneshot::Sender<Reply>,
}

#[derive(Default)]
struct State {
    endpoints: BTreeMap<u64, ServerEndpoint>,
    queue: VecDeque<Pending>,
    next_seq: u64,
    next_endpoint: u64,
    spawn_failures: u32,
    descriptor: Option<ModelDescriptor>,
    descriptor_waiters: usize,
    exhausted: u64,
    records: Vec<DispatchRecord>,
    busy: usize,
    max_busy: usize,
    spawns: u64,
    stopped: bool,
}

impl State {
    fn live(&self) -> usize {
        self.endpoints.values().filter(|e| e.is_live()).count()
    }

    fn starting(&self) -> usize {
        self.endpoints
            .values()
            .filter(|e| {
                matches!(
                    e.state,
                    EndpointState::Spawning | EndpointState::Registering
                )
            })
            .count()
    }

    fn insert_by_seq(&mut self, p: Pending) {
        let at = self
            .queue
            .iter()
            .position(|q| q.seq > p.seq)
            .unwrap_or(self.queue.len());
        self.queue.insert(at, p);
    }
}

struct Inner {
    cfg: BalancerConfig,
    backend: Arc<dyn Backend>,
    transport: Transport,
    log: EventLog,
    state: Mutex<State>,
    changed: Notify,
}

/// Counters and endpoint table at one instant.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub endpoints: Vec<ServerEndpoint>,
    pub queue_len: usize,
    pub live: usize,
    pub busy: usize,
    pub max_busy: usize,
    pub spawns: u64,
}

/// Handle to a running balancer; cheap to clone.
#[derive(Clone)]
pub struct Balancer {
    inner: Arc<Inner>,
    health: Arc<Mutex<Option<JoinHandle<()>>>>,
}

enum Action {
    Dispatch {
        endpoint: u64,
        url: String,
        pending: Pending,
    },
    Spawn(u64),
}

impl Balancer {
    pub fn new(cfg: BalancerConfig, backend: Arc<dyn Backend>) -> Result<Self, BalancerError> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.reg_dir)
            .map_err(|e| BalancerError::Config(format!("{}: {e}", cfg.reg_dir.display())))?;
        let log = match &cfg.event_log {
            Some(path) => EventLog::with_file(path)
                .map_err(|e| BalancerError::Config(format!("{}: {e}", path.display())))?,
            None => EventLog::in_memory(),
        };
        let inner = Arc::new(Inner {
            cfg,
            backend,
            transport: Transport::new(),
            log,
            state: Mutex::new(State::default()),
            changed: Notify::new(),
        });
        let weak = Arc::downgrade(&inner);
        let period = inner.cfg.health_period;
        let health = tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            tick.tick().await;
            loop {
                tick.tick().await;
                let Some(inner) = weak.upgrade() else { break };
                inner.health_round().await;
            }
        });
        Ok(Balancer {
            inner,
            health: Arc::new(Mutex::new(Some(health))),
        })
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.inner.cfg
    }

    pub fn mode(&self) -> AllocationMode {
        self.inner.backend.mode()
    }

    pub fn log(&self) -> &EventLog {
        &self.inner.log
    }

    pub fn records(&self) -> Vec<DispatchRecord> {
        let mut r = self.inner.lock().records.clone();
        r.sort_by_key(|d| d.seq);
        r
    }

    pub fn snapshot(&self) -> Snapshot {
        let st = self.inner.lock();
        Snapshot {
            endpoints: st.endpoints.values().cloned().collect(),
            queue_len: st.queue.len(),
            live: st.live(),
            busy: st.busy,
            max_busy: st.max_busy,
            spawns: st.spawns,
        }
    }

    /// Routes one raw evaluate body and waits for the reply.
    pub async fn dispatch(&self, body: Bytes) -> Reply {
        let rx = match self.inner.enqueue(body) {
            Ok(rx) => rx,
            Err(reply) => return reply,
        };
        self.inner.pump();
        match rx.await {
            Ok(reply) => reply,
            Err(_) => Reply::error(502, codes::UPSTREAM_FAILURE, "balancer stopped"),
        }
    }

    /// Typed wrapper over [`Balancer::dispatch`].
    pub async fn evaluate(&self, req: &EvaluationRequest) -> Result<Vec<Vec<f64>>, ProtocolError> {
        let body = Bytes::from(crate::protocol::encode_request(req));
        self.dispatch(body).await.into_result()
    }

    /// Model descriptor from the first preflight, starting a server if none
    /// is live.
    pub async fn descriptor(&self) -> Result<ModelDescriptor, BalancerError> {
        let deadline = tokio::time::Instant::now() + self.inner.cfg.registration_timeout * 2;
        let generation = {
            let mut st = self.inner.lock();
            if let Some(d) = &st.descriptor {
                return Ok(d.clone());
            }
            st.descriptor_waiters += 1;
            st.exhausted
        };
        self.inner.pump();
        let result = loop {
            let notified = self.inner.changed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            {
                let st = self.inner.lock();
                if let Some(d) = &st.descriptor {
                    break Ok(d.clone());
                }
                if st.exhausted != generation || st.stopped {
                    break Err(BalancerError::SpawnFailure(
                        "no server could be started".into(),
                    ));
                }
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                break Err(BalancerError::RegistrationTimeout(
                    self.inner.cfg.registration_timeout,
                ));
            }
        };
        self.inner.lock().descriptor_waiters -= 1;
        result
    }

    /// Runs one health round now instead of waiting for the period.
    pub async fn check_health(&self) {
        self.inner.health_round().await;
    }

    /// Stops the health loop, fails waiting requests and cancels every job.
    pub async fn shutdown(&self) {
        if let Some(h) = self.health.lock().expect("health task").take() {
            h.abort();
        }
        let (jobs, waiting) = {
            let mut st = self.inner.lock();
            st.stopped = true;
            let waiting: Vec<Pending> = st.queue.drain(..).collect();
            let mut jobs = Vec::new();
            for e in st.endpoints.values_mut() {
                if e.state != EndpointState::Retired {
                    e.state = EndpointState::Retired;
                    jobs.extend(e.backend_job_id.map(JobHandle));
                }
            }
            (jobs, waiting)
        };
        for p in waiting {
            self.inner.finish(
                p,
                None,
                Outcome::UpstreamFailure,
                Reply::error(502, codes::UPSTREAM_FAILURE, "balancer stopped"),
            );
        }
        for j in jobs {
            let _ = self.inner.backend.cancel(j).await;
        }
        self.inner.changed.notify_waiters();
    }
}

impl Drop for Balancer {
    fn drop(&mut self) {
        if Arc::strong_count(&self.health) == 1 {
            if let Some(h) = self.health.lock().expect("health task").take() {
                h.abort();
            }
        }
    }
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("balancer state")
    }

    fn enqueue(&self, body: Bytes) -> Result<oneshot::Receiver<Reply>, Reply> {
        let req = decode_request(&body).map_err(|e| Reply::from_protocol(&e))?;
        if req.model_name != self.cfg.model_name {
            return Err(Reply::from_protocol(&ProtocolError::UnknownModel(
                req.model_name,
            )));
        }
        let (tx, rx) = oneshot::channel();
        let arrival = self.log.now();
        let mut st = self.lock();
        if let Some(d) = &st.descriptor {
            d.check_inputs(&req.inputs)
                .map_err(|e| Reply::from_protocol(&e))?;
        }
        if st.stopped {
            return Err(Reply::error(
                502,
                codes::UPSTREAM_FAILURE,
                "balancer stopped",
            ));
        }
        let seq = st.next_seq;
        st.next_seq += 1;
        if let Some(bound) = self.cfg.queue_bound {
            if st.queue.len() >= bound {
                let len = st.queue.len();
                st.records.push(DispatchRecord {
                    seq,
                    arrival,
                    first_dispatch: None,
                    dispatch: None,
                    completion: arrival,
                    endpoint: None,
                    attempts: 0,
                    outcome: Outcome::NoCapacity,
                    compute: None,
                });
                drop(st);
                self.log
                    .record("reject", json!({"seq": seq, "queue_len": len}));
                return Err(Reply::error(
                    503,
                    codes::NO_CAPACITY,
                    BalancerError::NoCapacity(len).to_string(),
                ));
            }
        }
        st.queue.push_back(Pending {
            seq,
            body,
            arrival,
            first_dispatch: None,
            attempts: 0,
            reply: tx,
        });
        drop(st);
        self.log.record("arrive", json!({"seq": seq}));
        Ok(rx)
    }

    /// Matches the queue head with the lowest-id idle server, repeatedly,
    /// then starts servers while the waiting requests outnumber the servers
    /// already on their way.
    fn pump(self: &Arc<Self>) {
        let mut actions = Vec::new();
        {
            let mut st = self.lock();
            if st.stopped {
                return;
            }
            while !st.queue.is_empty() {
                let Some(id) = st
                    .endpoints
                    .values()
                    .find(|e| e.state == EndpointState::Ready && e.in_flight == 0)
                    .map(|e| e.id)
                else {
                    break;
                };
                let mut pending = st.queue.pop_front().expect("queue is non-empty");
                let e = st.endpoints.get_mut(&id).expect("endpoint exists");
                e.state = EndpointState::Busy;
                e.in_flight += 1;
                let url = e.url();
                pending.attempts += 1;
                st.busy += 1;
                st.max_busy = st.max_busy.max(st.busy);
                actions.push(Action::Dispatch {
                    endpoint: id,
                    url,
                    pending,
                });
            }
            let want_descriptor =
                st.descriptor.is_none() && st.descriptor_waiters > 0 && st.live() == 0;
            while (st.queue.len() > st.starting() || want_descriptor && st.live() == 0)
                && st.live() < self.cfg.max_servers
            {
                let id = st.next_endpoint;
                st.next_endpoint += 1;
                st.spawns += 1;
                let reg_file = self.cfg.reg_dir.join(format!("server-{id}.addr"));
                st.endpoints.insert(
                    id,
                    ServerEndpoint {
                        id,
                        address: None,
                        state: EndpointState::Spawning,
                        backend_job_id: None,
                        descriptor: None,
                        last_health_ok: None,
                        registered_at: None,
                        evaluations: 0,
                        reg_file,
                        in_flight: 0,
                    },
                );
                actions.push(Action::Spawn(id));
            }
        }
        for action in actions {
            let inner = self.clone();
            match action {
                Action::Dispatch {
                    endpoint,
                    url,
                    mut pending,
                } => {
                    let now = self.log.now();
                    pending.first_dispatch.get_or_insert(now);
                    self.log.record(
                        "dispatch",
                        json!({"seq": pending.seq, "endpoint": endpoint, "attempt": pending.attempts}),
                    );
                    tokio::spawn(async move { inner.forward(endpoint, url, pending, now).await });
                }
                Action::Spawn(id) => {
                    tokio::spawn(async move { inner.bring_up(id).await });
                }
            }
        }
    }

    async fn forward(
        self: Arc<Self>,
        endpoint: u64,
        url: String,
        pending: Pending,
        dispatched: Nanos,
    ) {
        let result = self
            .transport
            .post(
                &url,
                "/evaluate",
                pending.body.to_vec(),
                self.cfg.eval_timeout,
            )
            .await;
        let per_job = self.backend.mode() == AllocationMode::PerJob;
        let mut cancel = None;
        let reply = {
            let mut st = self.lock();
            st.busy -= 1;
            let e = st.endpoints.get_mut(&endpoint).expect("endpoint exists");
            e.in_flight -= 1;
            let job = e.backend_job_id.map(JobHandle);
            match result {
                Ok(raw) => {
                    e.evaluations += 1;
                    if per_job {
                        e.state = EndpointState::Retired;
                        cancel = job;
                    } else if e.state == EndpointState::Busy {
                        e.state = EndpointState::Ready;
                    }
                    Ok(raw)
                }
                Err(ProtocolError::Timeout) => {
                    e.state = EndpointState::Retired;
                    cancel = job;
                    Err((false, "evaluation exceeded the job time limit".to_owned()))
                }
                Err(err) => {
                    e.state = EndpointState::Unhealthy;
                    cancel = job;
                    Err((true, err.to_string()))
                }
            }
        };
        if let Some(job) = cancel {
            self.retire(endpoint, job).await;
        }
        match reply {
            Ok(RawReply {
                status,
                body,
                compute,
            }) => {
                let outcome = if (200..300).contains(&status) {
                    Outcome::Success
                } else {
                    Outcome::RemoteError
                };
                self.log.record(
                    "complete",
                    json!({"seq": pending.seq, "endpoint": endpoint, "status": status,
                           "compute": compute.map(|c| c.as_secs_f64())}),
                );
                let reply = Reply {
                    status,
                    body,
                    compute,
                };
                self.finish_dispatched(
                    pending,
                    endpoint,
                    dispatched,
                    compute.map(Nanos::from),
                    outcome,
                    reply,
                );
            }
            Err((retryable, message)) => {
                self.log.record(
                    "upstream_error",
                    json!({"seq": pending.seq, "endpoint": endpoint, "retryable": retryable, "error": message}),
                );
                if retryable && pending.attempts <= self.cfg.retries && !self.lock().stopped {
                    self.log.record(
                        "retry",
                        json!({"seq": pending.seq, "attempt": pending.attempts + 1}),
                    );
                    self.lock().insert_by_seq(pending);
                } else {
                    let reply = Reply::error(502, codes::UPSTREAM_FAILURE, message);
                    self.finish_dispatched(
                        pending,
                        endpoint,
                        dispatched,
                        None,
                        Outcome::UpstreamFailure,
                        reply,
                    );
                }
            }
        }
        self.pump();
    }

    fn finish_dispatched(
        &self,
        pending: Pending,
        endpoint: u64,
        dispatched: Nanos,
        compute: Option<Nanos>,
        outcome: Outcome,
        reply: Reply,
    ) {
        let rec = DispatchRecord {
            seq: pending.seq,
            arrival: pending.arrival,
            first_dispatch: pending.first_dispatch,
            dispatch: Some(dispatched),
            completion: self.log.now(),
            endpoint: Some(endpoint),
            attempts: pending.attempts,
            outcome,
            compute,
        };
        self.lock().records.push(rec);
        let _ = pending.reply.send(reply);
    }

    fn finish(&self, pending: Pending, endpoint: Option<u64>, outcome: Outcome, reply: Reply) {
        let rec = DispatchRecord {
            seq: pending.seq,
            arrival: pending.arrival,
            first_dispatch: pending.first_dispatch,
            dispatch: None,
            completion: self.log.now(),
            endpoint,
            attempts: pending.attempts,
            outcome,
            compute: None,
        };
        self.lock().records.push(rec);
        let _ = pending.reply.send(reply);
    }

    async fn retire(&self, endpoint: u64, job: JobHandle) {
        self.log
            .record("retire", json!({"endpoint": endpoint, "job": job.0}));
        {
            let mut st = self.lock();
            if let Some(e) = st.endpoints.get_mut(&endpoint) {
                e.state = EndpointState::Retired;
            }
        }
        if let Err(e) = self.backend.cancel(job).await {
            tracing::warn!(endpoint, error = %e, "cancel failed");
        }
    }

    async fn bring_up(self: Arc<Self>, id: u64) {
        let reg_file = self.lock().endpoints[&id].reg_file.clone();
        let _ = std::fs::remove_file(&reg_file);
        self.log.record(
            "spawn",
            json!({"endpoint": id, "reg_file": reg_file.display().to_string()}),
        );
        let result = self.start_endpoint(id, &reg_file).await;
        match result {
            Ok(desc) => {
                let now = self.log.now();
                {
                    let mut st = self.lock();
                    st.spawn_failures = 0;
                    if st.descriptor.is_none() {
                        st.descriptor = Some(desc.clone());
                    }
                    let e = st.endpoints.get_mut(&id).expect("endpoint exists");
                    if e.state == EndpointState::Registering {
                        e.state = EndpointState::Ready;
                        e.descriptor = Some(desc);
                        e.registered_at = Some(now);
                        e.last_health_ok = Some(now);
                    }
                }
                self.log.record("ready", json!({"endpoint": id}));
                self.changed.notify_waiters();
            }
            Err((err, job)) => {
                self.log.record(
                    "spawn_failed",
                    json!({"endpoint": id, "error": err.to_string()}),
                );
                tracing::warn!(endpoint = id, error = %err, "server did not come up");
                if let Some(job) = job {
                    self.retire(id, job).await;
                }
                let failed: Vec<Pending> = {
                    let mut st = self.lock();
                    if let Some(e) = st.endpoints.get_mut(&id) {
                        e.state = EndpointState::Retired;
                    }
                    st.spawn_failures += 1;
                    if st.spawn_failures >= self.cfg.max_consecutive_spawn_failures {
                        st.spawn_failures = 0;
                        st.exhausted += 1;
                        st.queue.drain(..).collect()
                    } else {
                        Vec::new()
                    }
                };
                if !failed.is_empty() {
                    self.log.record(
                        "spawn_budget_exhausted",
                        json!({"failed_requests": failed.len()}),
                    );
                }
                for p in failed {
                    let msg = format!("no server could be started: {err}");
                    self.finish(
                        p,
                        None,
                        Outcome::UpstreamFailure,
                        Reply::error(502, codes::UPSTREAM_FAILURE, msg),
                    );
                }
                self.changed.notify_waiters();
            }
        }
        self.pump();
    }

    async fn start_endpoint(
        &self,
        id: u64,
        reg_file: &std::path::Path,
    ) -> Result<ModelDescriptor, (BalancerError, Option<JobHandle>)> {
        let job = self
            .backend
            .submit(reg_file)
            .await
            .map_err(|e| (BalancerError::SpawnFailure(e.to_string()), None))?;
        {
            let mut st = self.lock();
            let e = st.endpoints.get_mut(&id).expect("endpoint exists");
            e.backend_job_id = Some(job.0);
            if e.state == EndpointState::Retired {
                drop(st);
                return Err((
                    BalancerError::SpawnFailure("balancer stopped".into()),
                    Some(job),
                ));
            }
        }
        let opts = RegistrationOptions {
            timeout: self.cfg.registration_timeout,
            poll: self.cfg.registration_poll,
            health_timeout: self.cfg.health_timeout,
        };
        let addr = register_from_file(
            reg_file,
            &opts,
            &self.transport,
            Some((self.backend.as_ref(), job)),
        )
        .await
        .map_err(|e| (e, Some(job)))?;
        {
            let mut st = self.lock();
            let e = st.endpoints.get_mut(&id).expect("endpoint exists");
            if e.state != EndpointState::Spawning {
                return Err((
                    BalancerError::SpawnFailure("endpoint retired during registration".into()),
                    Some(job),
                ));
            }
            e.state = EndpointState::Registering;
            e.address = Some(addr.clone());
        }
        self.log.record(
            "register",
            json!({"endpoint": id, "address": addr, "job": job.0}),
        );
        let expect = Expectation {
            model_name: self.cfg.model_name.clone(),
            input_sizes: self.cfg.expected_input_sizes.clone(),
            output_sizes: self.cfg.expected_output_sizes.clone(),
        };
        let url = format!("http://{addr}");
        let desc = preflight(
            &self.transport,
            &url,
            &expect,
            self.cfg.health_timeout,
            &self.log,
            id,
        )
        .await
        .map_err(|e| (e, Some(job)))?;
        if let Some(cached) = self.lock().descriptor.clone() {
            if cached != desc {
                return Err((
                    BalancerError::PreflightMismatch(format!(
                        "{desc:?} differs from the pool's {cached:?}"
                    )),
                    Some(job),
                ));
            }
        }
        self.log
            .record("preflight", json!({"endpoint": id, "queries": 5}));
        Ok(desc)
    }

    /// Pings every idle server; failures are retired and replaced on demand.
    async fn health_round(self: &Arc<Self>) {
        let targets: Vec<(u64, String, Option<JobHandle>)> = {
            let st = self.lock();
            if st.stopped {
                return;
            }
            st.endpoints
                .values()
                .filter(|e| e.state == EndpointState::Ready)
                .map(|e| (e.id, e.url(), e.backend_job_id.map(JobHandle)))
                .collect()
        };
        let checks = targets.into_iter().map(|(id, url, job)| {
            let inner = self.clone();
            async move {
                let mut health =
                    health_check(&inner.transport, &url, inner.cfg.health_timeout).await;
                if health.is_healthy() {
                    if let Some(job) = job {
                        if let Ok(state) = inner.backend.status(job).await {
                            if state.is_terminal() {
                                health = Health::Unhealthy(
                                    crate::protocol::UnhealthyReason::Unreachable(format!(
                                        "job ended: {state:?}"
                                    )),
                                );
                            }
                        }
                    }
                }
                (id, job, health)
            }
        });
        let results = futures::future::join_all(checks).await;
        let now = self.log.now();
        for (id, job, health) in results {
            let failed = {
                let mut st = self.lock();
                let Some(e) = st.endpoints.get_mut(&id) else {
                    continue;
                };
                match (&health, e.state) {
                    (Health::Healthy, _) => {
                        e.last_health_ok = Some(now);
                        false
                    }
                    // a server that took work while being probed is judged by that request
                    (_, EndpointState::Busy) => false,
                    (_, EndpointState::Ready) => {
                        e.state = EndpointState::Unhealthy;
                        true
                    }
                    _ => false,
                }
            };
            self.log.record(
                "health",
                json!({"endpoint": id, "ok": health.is_healthy(), "detail": format!("{health:?}")}),
            );
            if failed {
                match job {
                    Some(job) => self.retire(id, job).await,
                    None => {
                        if let Some(e) = self.lock().endpoints.get_mut(&id) {
                            e.state = EndpointState::Retired;
                        }
                    }
                }
            }
        }
        self.pump();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults() {
        let cfg = BalancerConfig::new("/tmp/x");
        assert_eq!(cfg.health_period, Duration::from_secs(5));
        assert_eq!(cfg.registration_timeout, Duration::from_secs(60));
        assert_eq!(cfg.registration_poll, Duration::from_millis(250));
        assert_eq!(cfg.retries, 1);
        assert!(cfg.queue_bound.is_none());
        assert!(BalancerConfig {
            max_servers: 0,
            ..cfg
        }
        .validate()
        .is_err());
    }
}
