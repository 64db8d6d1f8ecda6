//! Deterministic discrete-event emulator of a batch scheduler, in per-job
//! and bulk-allocation flavors.
//!
//! Per-job: every submission waits `queue_wait`, takes the lowest-numbered
//! free node, pays `perjob_launch_overhead` and then computes for
//! `server_init + env_reinit + duration`.
//!
//! Bulk: submissions queue for persistent workers. Allocations of
//! `workers_per_alloc` workers are requested while waiting tasks outnumber
//! idle and pending workers; each allocation waits `queue_wait` once and
//! lives for `allocation_time_limit`. A task is placed on the lowest-numbered
//! idle worker whose allocation has at least `time_request` left, pays
//! `bulk_task_overhead`, and computes for `duration` (plus `server_init` on
//! a worker's first task).
//!
//! Every random quantity comes from its own seeded stream, so the `k`-th
//! queue wait is the same draw in both modes.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{AllocationMode, AllocationSpec, JobSpec, SimConfig, SpecError};
use crate::dist::Distribution;
use crate::metrics::TaskRecord;
use crate::time::Nanos;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("no allocation can host the task: the last allocation expired and renewal is off")]
    AllocationExpired,
    #[error("submission rejected: {0} jobs already waiting")]
    SubmitRejected(usize),
    #[error("unknown job handle {0}")]
    UnknownHandle(u64),
    #[error(transparent)]
    Config(#[from] SpecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Completed,
    /// Killed at its time limit or at allocation expiry.
    Truncated,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimJobOutcome {
    pub job_id: u64,
    pub submit_t: Nanos,
    pub alloc_t: Nanos,
    pub start_t: Nanos,
    pub end_t: Nanos,
    pub cpu_time: Nanos,
    pub node_id: u32,
    pub status: JobStatus,
}

impl SimJobOutcome {
    pub fn is_ordered(&self) -> bool {
        self.submit_t <= self.alloc_t && self.alloc_t <= self.start_t && self.start_t <= self.end_t
    }

    pub fn to_task_record(&self) -> TaskRecord {
        TaskRecord {
            task_id: self.job_id,
            submit_t: self.submit_t,
            start_t: self.start_t,
            end_t: self.end_t,
            cpu_time: self.cpu_time,
            alloc_t: Some(self.alloc_t),
        }
    }
}

/// Writes outcomes as CSV: `job_id,submit_t,alloc_t,start_t,end_t,cpu_time,node_id`.
pub fn write_outcomes_csv<W: Write>(out: W, outcomes: &[SimJobOutcome]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "job_id", "submit_t", "alloc_t", "start_t", "end_t", "cpu_time", "node_id",
    ])?;
    for o in outcomes {
        w.write_record([
            o.job_id.to_string(),
            o.submit_t.to_string(),
            o.alloc_t.to_string(),
            o.start_t.to_string(),
            o.end_t.to_string(),
            o.cpu_time.to_string(),
            o.node_id.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Complete(u64),
    Expire(u32),
    Grant(u32),
    Eligible(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Queued,
    Waiting,
    Running,
    Done,
}

#[derive(Debug, Clone)]
struct Job {
    duration: Nanos,
    submit_t: Nanos,
    alloc_t: Nanos,
    start_t: Nanos,
    end_t: Nanos,
    node: u32,
    state: State,
    status: JobStatus,
    /// Per-job: (launch, reinit). Bulk: (task overhead, 0).
    overheads: (Nanos, Nanos),
    work: Nanos,
    ran: bool,
}

#[derive(Debug, Clone)]
struct Worker {
    expires: Nanos,
    busy: Option<u64>,
    served: bool,
    retired: bool,
}

#[derive(Debug, Clone)]
struct Allocation {
    workers: u32,
}

struct Streams {
    queue_wait: ChaCha8Rng,
    launch: ChaCha8Rng,
    reinit: ChaCha8Rng,
    task: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Streams {
            queue_wait: stream(1),
            launch: stream(2),
            reinit: stream(3),
            task: stream(4),
        }
    }
}

fn draw(d: &Distribution, rng: &mut ChaCha8Rng) -> Nanos {
    Nanos::from_secs_f64(d.sample(rng))
}

/// Step-wise emulator. Submit jobs, then advance the clock.
pub struct Simulator {
    cfg: SimConfig,
    mode: AllocationMode,
    job: JobSpec,
    alloc: AllocationSpec,
    rng: Streams,
    now: Nanos,
    seq: u64,
    events: BinaryHeap<Reverse<(Nanos, Event, u64)>>,
    jobs: Vec<Job>,
    waiting: VecDeque<u64>,
    nodes: Vec<Option<u64>>,
    workers: Vec<Worker>,
    allocations: Vec<Allocation>,
    pending_allocs: u32,
    pending_workers: u32,
    first_expiry: Option<Nanos>,
    expired: Vec<u64>,
    finished: Vec<u64>,
}

impl Simulator {
    pub fn new(cfg: SimConfig, job: JobSpec, alloc: AllocationSpec) -> Result<Self, SimError> {
        cfg.validate()?;
        job.validate()?;
        alloc.validate()?;
        Ok(Simulator {
            rng: Streams::new(cfg.rng_seed),
            nodes: vec![None; cfg.node_count as usize],
            mode: job.mode,
            cfg,
            job,
            alloc,
            now: Nanos::ZERO,
            seq: 0,
            events: BinaryHeap::new(),
            jobs: Vec::new(),
            waiting: VecDeque::new(),
            workers: Vec::new(),
            allocations: Vec::new(),
            pending_allocs: 0,
            pending_workers: 0,
            first_expiry: None,
            expired: Vec::new(),
            finished: Vec::new(),
        })
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn mode(&self) -> AllocationMode {
        self.mode
    }

    /// Workers started so far (bulk mode).
    pub fn workers_started(&self) -> usize {
        self.workers.len()
    }

    pub fn allocations_requested(&self) -> usize {
        self.allocations.len()
    }

    /// Jobs that could never be placed because allocations ran out.
    pub fn expired(&self) -> &[u64] {
        &self.expired
    }

    fn push(&mut self, t: Nanos, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((t, ev, self.seq)));
    }

    fn queued_jobs(&self) -> usize {
        self.jobs
            .iter()
            .filter(|j| matches!(j.state, State::Queued | State::Waiting))
            .count()
    }

    /// Submits a job of the given compute duration at the current time.
    pub fn submit(&mut self, duration: Nanos) -> Result<u64, SimError> {
        if let Some(max) = self.cfg.max_queued {
            let q = self.queued_jobs();
            if q >= max {
                return Err(SimError::SubmitRejected(q));
            }
        }
        if self.mode == AllocationMode::Bulk && self.allocations_exhausted() {
            return Err(SimError::AllocationExpired);
        }
        let id = self.jobs.len() as u64;
        let (eligible, overheads) = match self.mode {
            AllocationMode::PerJob => {
                let w = draw(&self.cfg.queue_wait, &mut self.rng.queue_wait);
                let l = draw(&self.cfg.perjob_launch_overhead, &mut self.rng.launch);
                let r = draw(&self.cfg.env_reinit_overhead, &mut self.rng.reinit);
                (self.now + w, (l, r))
            }
            AllocationMode::Bulk => {
                let o = draw(&self.cfg.bulk_task_overhead, &mut self.rng.task);
                (self.now, (o, Nanos::ZERO))
            }
        };
        self.jobs.push(Job {
            duration,
            submit_t: self.now,
            alloc_t: Nanos::ZERO,
            start_t: Nanos::ZERO,
            end_t: Nanos::ZERO,
            node: 0,
            state: State::Queued,
            status: JobStatus::Completed,
            overheads,
            work: Nanos::ZERO,
            ran: false,
        });
        self.push(eligible, Event::Eligible(id));
        Ok(id)
    }

    /// Queued jobs never start; running jobs end now with their compute
    /// truncated; finished jobs are left alone.
    pub fn cancel(&mut self, id: u64) -> Result<(), SimError> {
        let now = self.now;
        let job = self
            .jobs
            .get_mut(id as usize)
            .ok_or(SimError::UnknownHandle(id))?;
        match job.state {
            State::Done => {}
            State::Queued | State::Waiting => {
                job.state = State::Done;
                job.status = JobStatus::Cancelled;
                self.waiting.retain(|j| *j != id);
            }
            State::Running => {
                job.state = State::Done;
                job.status = JobStatus::Cancelled;
                job.end_t = now;
                let node = job.node;
                self.release(node, id);
                self.finished.push(id);
                self.schedule();
            }
        }
        Ok(())
    }

    /// Outcome of a job that ran, if it has finished.
    pub fn outcome(&self, id: u64) -> Option<SimJobOutcome> {
        let j = self.jobs.get(id as usize)?;
        if j.state != State::Done || !j.ran {
            return None;
        }
        let cpu = j.end_t.saturating_sub(j.start_t).min(j.work);
        Some(SimJobOutcome {
            job_id: id,
            submit_t: j.submit_t,
            alloc_t: j.alloc_t,
            start_t: j.start_t.min(j.end_t),
            end_t: j.end_t,
            cpu_time: cpu,
            node_id: j.node,
            status: j.status,
        })
    }

    /// Every finished job that ran, by id.
    pub fn outcomes(&self) -> Vec<SimJobOutcome> {
        (0..self.jobs.len() as u64)
            .filter_map(|id| self.outcome(id))
            .collect()
    }

    pub fn next_event_time(&self) -> Option<Nanos> {
        self.events.peek().map(|Reverse((t, _, _))| *t)
    }

    /// Processes every event at the next event time. Returns the ids of jobs
    /// that finished, or `None` when nothing is left to happen.
    pub fn advance(&mut self) -> Option<Vec<u64>> {
        let t = self.next_event_time()?;
        self.now = t;
        while self.next_event_time() == Some(t) {
            let Some(Reverse((_, ev, _))) = self.events.pop() else {
                break;
            };
            self.handle(ev);
        }
        self.schedule();
        Some(std::mem::take(&mut self.finished))
    }

    /// Processes all events up to and including `t`, then sets the clock to `t`.
    pub fn run_until(&mut self, t: Nanos) -> Vec<u64> {
        let mut done = Vec::new();
        while self.next_event_time().is_some_and(|next| next <= t) {
            done.extend(self.advance().unwrap_or_default());
        }
        self.now = self.now.max(t);
        done
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Eligible(id) => {
                let j = &mut self.jobs[id as usize];
                if j.state == State::Queued {
                    j.state = State::Waiting;
                    self.waiting.push_back(id);
                }
            }
            Event::Complete(id) => {
                let j = &mut self.jobs[id as usize];
                if j.state == State::Running && j.end_t == self.now {
                    j.state = State::Done;
                    let node = j.node;
                    self.release(node, id);
                    self.finished.push(id);
                }
            }
            Event::Grant(a) => {
                let n = self.allocations[a as usize].workers;
                self.pending_allocs -= 1;
                self.pending_workers -= n;
                let expires = self.now + self.alloc.allocation_time_limit;
                self.first_expiry.get_or_insert(expires);
                for _ in 0..n {
                    let w = self.workers.len() as u32;
                    self.workers.push(Worker {
                        expires,
                        busy: None,
                        served: false,
                        retired: false,
                    });
                    self.push(expires, Event::Expire(w));
                }
            }
            Event::Expire(w) => {
                let worker = &mut self.workers[w as usize];
                worker.retired = true;
                // completions at this instant were handled first, so anything
                // still running is cut off here
                if let Some(id) = worker.busy.take() {
                    let j = &mut self.jobs[id as usize];
                    if j.state == State::Running {
                        j.state = State::Done;
                        j.status = JobStatus::Truncated;
                        j.end_t = self.now;
                        self.finished.push(id);
                    }
                }
            }
        }
    }

    fn release(&mut self, node: u32, id: u64) {
        match self.mode {
            AllocationMode::PerJob => {
                if self.nodes[node as usize] == Some(id) {
                    self.nodes[node as usize] = None;
                }
            }
            AllocationMode::Bulk => {
                let w = &mut self.workers[node as usize];
                if w.busy == Some(id) {
                    w.busy = None;
                }
            }
        }
    }

    fn live_workers(&self) -> u32 {
        self.workers.iter().filter(|w| !w.retired).count() as u32
    }

    fn usable(&self, w: &Worker) -> bool {
        !w.retired && w.expires.saturating_sub(self.now) >= self.job.time_request
    }

    fn allocations_exhausted(&self) -> bool {
        !self.alloc.renew
            && self.first_expiry.is_some_and(|t| self.now >= t)
            && self.pending_allocs == 0
            && !self.workers.iter().any(|w| self.usable(w))
    }

    fn schedule(&mut self) {
        match self.mode {
            AllocationMode::PerJob => self.schedule_perjob(),
            AllocationMode::Bulk => self.schedule_bulk(),
        }
    }

    fn schedule_perjob(&mut self) {
        while let Some(&id) = self.waiting.front() {
            let Some(node) = self.nodes.iter().position(Option::is_none) else {
                break;
            };
            self.waiting.pop_front();
            self.nodes[node] = Some(id);
            let now = self.now;
            let limit = self.job.time_limit;
            let server_init = self.cfg.server_init;
            let j = &mut self.jobs[id as usize];
            let (launch, reinit) = j.overheads;
            j.node = node as u32;
            j.alloc_t = now;
            j.start_t = now + launch;
            j.work = server_init + reinit + j.duration;
            let deadline = now + limit;
            let natural = j.start_t + j.work;
            j.end_t = natural.min(deadline);
            j.start_t = j.start_t.min(j.end_t);
            if natural > deadline {
                j.status = JobStatus::Truncated;
            }
            j.state = State::Running;
            j.ran = true;
            let end = j.end_t;
            self.push(end, Event::Complete(id));
        }
    }

    fn schedule_bulk(&mut self) {
        while let Some(&id) = self.waiting.front() {
            let Some(w) = (0..self.workers.len())
                .find(|&w| self.workers[w].busy.is_none() && self.usable(&self.workers[w]))
            else {
                break;
            };
            self.waiting.pop_front();
            let now = self.now;
            let limit = self.job.time_limit;
            let server_init = self.cfg.server_init;
            let worker = &mut self.workers[w];
            worker.busy = Some(id);
            let first = !std::mem::replace(&mut worker.served, true);
            let expires = worker.expires;
            let j = &mut self.jobs[id as usize];
            j.node = w as u32;
            j.alloc_t = now;
            j.start_t = now + j.overheads.0;
            j.work = j.duration + if first { server_init } else { Nanos::ZERO };
            let natural = j.start_t + j.work;
            // the worker's expiry event truncates tasks that reach it
            let deadline = (now + limit).min(expires);
            j.end_t = natural.min(deadline);
            j.start_t = j.start_t.min(j.end_t);
            if natural > deadline {
                j.status = JobStatus::Truncated;
            }
            j.state = State::Running;
            j.ran = true;
            let end = j.end_t;
            self.push(end, Event::Complete(id));
        }
        self.request_allocations();
        if self.allocations_exhausted() {
            while let Some(id) = self.waiting.pop_front() {
                let j = &mut self.jobs[id as usize];
                j.state = State::Done;
                j.status = JobStatus::Cancelled;
                self.expired.push(id);
                self.finished.push(id);
            }
        }
    }

    fn request_allocations(&mut self) {
        if !self.alloc.renew && self.first_expiry.is_some_and(|t| self.now >= t) {
            return;
        }
        let cap = self.alloc.max_worker_count.min(self.cfg.node_count);
        loop {
            let idle = self
                .workers
                .iter()
                .filter(|w| w.busy.is_none() && self.usable(w))
                .count() as u32;
            let demand = self.waiting.len() as u32;
            if demand <= idle + self.pending_workers || self.pending_allocs >= self.alloc.backlog {
                return;
            }
            let room = cap.saturating_sub(self.live_workers() + self.pending_workers);
            let n = self.alloc.workers_per_alloc.min(room);
            if n == 0 {
                return;
            }
            let a = self.allocations.len() as u32;
            self.allocations.push(Allocation { workers: n });
            self.pending_allocs += 1;
            self.pending_workers += n;
            let wait = draw(&self.cfg.queue_wait, &mut self.rng.queue_wait);
            self.push(self.now + wait, Event::Grant(a));
        }
    }
}

/// How a workload is fed to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "depth")]
pub enum Submission {
    /// Everything at time zero.
    AllAtOnce,
    /// `depth` jobs outstanding: a new one is submitted as each finishes.
    Depth(usize),
}

/// Inputs of one emulator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSetup {
    pub sim: SimConfig,
    pub job: JobSpec,
    pub allocation: AllocationSpec,
    pub submission: Submission,
}

/// Runs `workload` (compute durations, in submission order) to completion
/// and returns the outcomes by job id. Jobs refused by the scheduler are
/// absent from the result.
pub fn run_sim(workload: &[Nanos], setup: &SimSetup) -> Result<Vec<SimJobOutcome>, SimError> {
    let mut sim = Simulator::new(
        setup.sim.clone(),
        setup.job.clone(),
        setup.allocation.clone(),
    )?;
    let depth = match setup.submission {
        Submission::AllAtOnce => workload.len(),
        Submission::Depth(d) => d.max(1),
    };
    let mut next = 0;
    let mut outstanding = 0usize;
    let feed = |sim: &mut Simulator, next: &mut usize, outstanding: &mut usize| {
        while *outstanding < depth && *next < workload.len() {
            let d = workload[*next];
            *next += 1;
            if sim.submit(d).is_ok() {
                *outstanding += 1;
            }
        }
    };
    feed(&mut sim, &mut next, &mut outstanding);
    while let Some(done) = sim.advance() {
        outstanding -= done.len().min(outstanding);
        feed(&mut sim, &mut next, &mut outstanding);
    }
    let mut by_id = BTreeMap::new();
    for o in sim.outcomes() {
        by_id.insert(o.job_id, o);
    }
    Ok(by_id.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(v: f64) -> Nanos {
        Nanos::from_secs_f64(v)
    }

    fn setup(mode: AllocationMode, sim: SimConfig) -> SimSetup {
        SimSetup {
            sim,
            job: JobSpec::new(mode, secs(60.0), secs(300.0)),
            allocation: AllocationSpec::single_worker(secs(600.0)),
            submission: Submission::AllAtOnce,
        }
    }

    #[test]
    fn ideal_single_node_is_serial() {
        let work: Vec<Nanos> = [0.5, 1.0, 0.25].iter().map(|v| secs(*v)).collect();
        let out = run_sim(&work, &setup(AllocationMode::PerJob, SimConfig::ideal())).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].end_t, secs(1.75));
        assert!(out.iter().all(SimJobOutcome::is_ordered));
    }

    #[test]
    fn cancel_semantics() {
        let s = setup(AllocationMode::PerJob, SimConfig::ideal());
        let mut sim = Simulator::new(s.sim, s.job, s.allocation).unwrap();
        let a = sim.submit(secs(10.0)).unwrap();
        let b = sim.submit(secs(10.0)).unwrap();
        sim.run_until(secs(4.0));
        sim.cancel(b).unwrap();
        sim.cancel(a).unwrap();
        let oa = sim.outcome(a).unwrap();
        assert_eq!(
            (oa.end_t, oa.cpu_time, oa.status),
            (secs(4.0), secs(4.0), JobStatus::Cancelled)
        );
        assert!(sim.outcome(b).is_none());
        sim.cancel(a).unwrap();
        assert_eq!(sim.cancel(99), Err(SimError::UnknownHandle(99)));
        while sim.advance().is_some() {}
        assert_eq!(sim.outcomes().len(), 1);
    }
}
