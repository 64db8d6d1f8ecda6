mod common;

use std::time::Duration;

use proptest::prelude::*;
use uqlb::backends::{
    run_sim, AllocationMode, AllocationSpec, Backend, JobSpec, JobState, JobStatus, ProcessBackend,
    SimConfig, SimError, SimJobOutcome, SimSetup, Simulator, Submission,
};
use uqlb::dist::Distribution;
use uqlb::metrics::{summarize, TaskRecord};
use uqlb::Nanos;

use common::{block_on, list_schedule_oracle};

fn secs(v: f64) -> Nanos {
    Nanos::from_secs_f64(v)
}

fn setup(mode: AllocationMode, sim: SimConfig, submission: Submission) -> SimSetup {
    SimSetup {
        sim,
        job: JobSpec::new(mode, secs(60.0), secs(300.0)),
        allocation: AllocationSpec::single_worker(secs(3600.0)),
        submission,
    }
}

fn records(out: &[SimJobOutcome]) -> Vec<TaskRecord> {
    out.iter().map(SimJobOutcome::to_task_record).collect()
}

fn hundred_short_tasks() -> Vec<Nanos> {
    vec![secs(0.01); 100]
}

#[test]
fn perjob_closed_form() {
    let sim = SimConfig {
        perjob_launch_overhead: Distribution::constant(2.0),
        ..SimConfig::ideal()
    };
    for submission in [Submission::AllAtOnce, Submission::Depth(1)] {
        let out = run_sim(
            &hundred_short_tasks(),
            &setup(AllocationMode::PerJob, sim.clone(), submission),
        )
        .unwrap();
        let s = summarize(&records(&out), None).unwrap();
        assert!(
            (s.makespan - 201.0).abs() < 1e-9,
            "{submission:?}: {}",
            s.makespan
        );
        assert!((s.overhead - 200.0).abs() < 1e-9);
        assert!((s.slr.unwrap() - 201.0).abs() < 1e-6);
    }
}

#[test]
fn bulk_closed_form() {
    let sim = SimConfig {
        queue_wait: Distribution::constant(5.0),
        bulk_task_overhead: Distribution::constant(0.001),
        ..SimConfig::ideal()
    };
    for submission in [Submission::AllAtOnce, Submission::Depth(1)] {
        let out = run_sim(
            &hundred_short_tasks(),
            &setup(AllocationMode::Bulk, sim.clone(), submission),
        )
        .unwrap();
        let s = summarize(&records(&out), None).unwrap();
        assert!((s.makespan - 6.1).abs() < 1e-9, "{}", s.makespan);
        assert!((s.overhead - 5.1).abs() < 1e-9);
        assert!(out.iter().all(|o| o.alloc_t >= secs(5.0)));
    }
}

#[test]
fn closed_form_overhead_ratio_is_about_39() {
    let pj = SimConfig {
        perjob_launch_overhead: Distribution::constant(2.0),
        ..SimConfig::ideal()
    };
    let bk = SimConfig {
        queue_wait: Distribution::constant(5.0),
        bulk_task_overhead: Distribution::constant(0.001),
        ..SimConfig::ideal()
    };
    let a = summarize(
        &records(
            &run_sim(
                &hundred_short_tasks(),
                &setup(AllocationMode::PerJob, pj, Submission::AllAtOnce),
            )
            .unwrap(),
        ),
        None,
    )
    .unwrap();
    let b = summarize(
        &records(
            &run_sim(
                &hundred_short_tasks(),
                &setup(AllocationMode::Bulk, bk, Submission::AllAtOnce),
            )
            .unwrap(),
        ),
        None,
    )
    .unwrap();
    assert!((a.overhead / b.overhead - 200.0 / 5.1).abs() < 1e-6);
}

#[test]
fn single_worker_allocation_starts_one_worker() {
    // --time-limit 10m --backlog 1 --worker-per-alloc 1 --max-worker-count 1, 4 GB
    let mut job = JobSpec::new(AllocationMode::Bulk, secs(60.0), secs(300.0));
    job.memory_gb = 4.0;
    let cfg = SimConfig {
        queue_wait: Distribution::uniform(1.0, 10.0),
        ..SimConfig::ideal()
    };
    let mut sim = Simulator::new(cfg, job, AllocationSpec::single_worker(secs(600.0))).unwrap();
    for _ in 0..50 {
        sim.submit(secs(0.5)).unwrap();
    }
    while sim.advance().is_some() {}
    assert_eq!(sim.workers_started(), 1);
    assert_eq!(sim.outcomes().len(), 50);
}

#[test]
fn zero_overhead_single_node_makespan_is_sum() {
    let work: Vec<Nanos> = (1..=20).map(|i| secs(0.013 * i as f64)).collect();
    let total: Nanos = work.iter().copied().sum();
    for mode in [AllocationMode::PerJob, AllocationMode::Bulk] {
        let out = run_sim(
            &work,
            &setup(mode, SimConfig::ideal(), Submission::AllAtOnce),
        )
        .unwrap();
        let s = summarize(&records(&out), None).unwrap();
        assert_eq!(Nanos::from_secs_f64(s.makespan), total);
        assert!((s.slr.unwrap() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn same_seed_same_outcomes() {
    let cfg = SimConfig {
        queue_wait: Distribution::uniform(1.0, 10.0),
        perjob_launch_overhead: Distribution::constant(2.0),
        env_reinit_overhead: Distribution::uniform(0.5, 2.0),
        rng_seed: 77,
        node_count: 3,
        ..SimConfig::ideal()
    };
    let work: Vec<Nanos> = (0..40).map(|i| secs(0.1 + 0.01 * i as f64)).collect();
    for mode in [AllocationMode::PerJob, AllocationMode::Bulk] {
        let s = setup(mode, cfg.clone(), Submission::Depth(4));
        assert_eq!(run_sim(&work, &s).unwrap(), run_sim(&work, &s).unwrap());
    }
}

#[test]
fn bounded_queue_rejects_submissions() {
    let cfg = SimConfig {
        max_queued: Some(2),
        ..SimConfig::ideal()
    };
    let s = setup(AllocationMode::PerJob, cfg, Submission::AllAtOnce);
    let mut sim = Simulator::new(s.sim, s.job, s.allocation).unwrap();
    sim.submit(secs(1.0)).unwrap();
    sim.submit(secs(1.0)).unwrap();
    assert!(matches!(
        sim.submit(secs(1.0)),
        Err(SimError::SubmitRejected(2))
    ));
}

#[test]
fn expired_allocation_without_renewal() {
    let cfg = SimConfig {
        queue_wait: Distribution::constant(1.0),
        ..SimConfig::ideal()
    };
    let job = JobSpec::new(AllocationMode::Bulk, secs(1.0), secs(2.0));
    let alloc = AllocationSpec {
        renew: false,
        ..AllocationSpec::single_worker(secs(5.0))
    };
    let mut sim = Simulator::new(cfg, job, alloc).unwrap();
    sim.submit(secs(0.5)).unwrap();
    sim.run_until(secs(20.0));
    assert_eq!(sim.submit(secs(0.5)), Err(SimError::AllocationExpired));
}

#[test]
fn cancel_is_idempotent_after_completion() {
    let s = setup(
        AllocationMode::PerJob,
        SimConfig::ideal(),
        Submission::AllAtOnce,
    );
    let mut sim = Simulator::new(s.sim, s.job, s.allocation).unwrap();
    let id = sim.submit(secs(1.0)).unwrap();
    while sim.advance().is_some() {}
    sim.cancel(id).unwrap();
    assert_eq!(sim.outcome(id).unwrap().status, JobStatus::Completed);
}

fn dist() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.0..3.0f64).prop_map(Distribution::constant),
        (0.0..2.0f64, 0.0..3.0f64).prop_map(|(a, w)| Distribution::uniform(a, a + w)),
    ]
}

fn sim_config() -> impl Strategy<Value = SimConfig> {
    (dist(), dist(), dist(), 1u32..4, any::<u64>()).prop_map(
        |(queue_wait, launch, task, nodes, seed)| SimConfig {
            queue_wait,
            perjob_launch_overhead: launch,
            bulk_task_overhead: task,
            node_count: nodes,
            rng_seed: seed,
            ..SimConfig::ideal()
        },
    )
}

fn workload() -> impl Strategy<Value = Vec<Nanos>> {
    prop::collection::vec((0u64..5_000_000_000).prop_map(Nanos), 1..40)
}

fn mode() -> impl Strategy<Value = AllocationMode> {
    prop_oneof![Just(AllocationMode::PerJob), Just(AllocationMode::Bulk)]
}

fn submission() -> impl Strategy<Value = Submission> {
    prop_oneof![
        Just(Submission::AllAtOnce),
        (1usize..6).prop_map(Submission::Depth)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn outcomes_are_ordered_and_conserve_cpu(
        cfg in sim_config(), work in workload(), mode in mode(), sub in submission(), workers in 1u32..4,
    ) {
        let s = SimSetup {
            sim: cfg,
            job: JobSpec::new(mode, secs(10.0), secs(20.0)),
            allocation: AllocationSpec { workers_per_alloc: workers, max_worker_count: workers, ..AllocationSpec::single_worker(secs(1e5)) },
            submission: sub,
        };
        let out = run_sim(&work, &s).unwrap();
        prop_assert_eq!(out.len(), work.len());
        prop_assert!(out.iter().all(SimJobOutcome::is_ordered));
        prop_assert!(out.iter().all(|o| o.status == JobStatus::Completed));
        let cpu: Nanos = out.iter().map(|o| o.cpu_time).sum();
        prop_assert_eq!(cpu, work.iter().copied().sum::<Nanos>());
    }

    #[test]
    fn ideal_perjob_equals_list_scheduling(
        work in prop::collection::vec(1u64..50, 1..=8), nodes in 1u32..=3,
    ) {
        let durations: Vec<Nanos> = work.iter().map(|d| Nanos(d * 1_000_000)).collect();
        let cfg = SimConfig { node_count: nodes, ..SimConfig::ideal() };
        let out = run_sim(&durations, &setup(AllocationMode::PerJob, cfg, Submission::AllAtOnce)).unwrap();
        let expected = list_schedule_oracle(&durations.iter().map(|d| d.0).collect::<Vec<_>>(), nodes as usize);
        for (o, (start, end, node)) in out.iter().zip(&expected) {
            prop_assert_eq!((o.start_t.0, o.end_t.0, o.node_id as usize), (*start, *end, *node));
        }
    }

    #[test]
    fn bulk_dominates_perjob_on_one_node(
        work in workload(), queue in dist(), launch in 0.0..3.0f64, reinit in dist(), frac in 0.0..=1.0f64,
        seed in any::<u64>(), init in 0.0..2.0f64,
    ) {
        let base = SimConfig {
            queue_wait: queue,
            perjob_launch_overhead: Distribution::constant(launch),
            bulk_task_overhead: Distribution::constant(launch * frac),
            env_reinit_overhead: reinit,
            server_init: secs(init),
            rng_seed: seed,
            ..SimConfig::ideal()
        };
        let pj = run_sim(&work, &setup(AllocationMode::PerJob, base.clone(), Submission::AllAtOnce)).unwrap();
        let bk = run_sim(&work, &setup(AllocationMode::Bulk, base, Submission::AllAtOnce)).unwrap();
        let span = |o: &[SimJobOutcome]| o.iter().map(|x| x.end_t).max().unwrap();
        let alloc_wait = bk.iter().map(|o| o.alloc_t).min().unwrap();
        prop_assert!(span(&bk) <= span(&pj) + alloc_wait);
    }
}

fn shell_job(mode: AllocationMode, script: &str, limit: f64) -> ProcessBackend {
    let mut spec = JobSpec::new(mode, secs(limit), secs(limit));
    spec.command = vec!["sh".into(), "-c".into(), script.into(), "job".into()];
    ProcessBackend::new(spec, None).unwrap()
}

async fn wait_terminal(b: &ProcessBackend, h: uqlb::backends::JobHandle) -> JobState {
    for _ in 0..200 {
        let s = b.status(h).await.unwrap();
        if s.is_terminal() {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    panic!("job never ended");
}

#[test]
fn process_backend_spawns_a_registering_server() {
    block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = JobSpec::new(AllocationMode::Bulk, secs(60.0), secs(120.0));
        spec.command = vec![
            env!("CARGO_BIN_EXE_bench").into(),
            "serve".into(),
            "--model".into(),
            "identity".into(),
            "--n".into(),
            "1".into(),
        ];
        let b = ProcessBackend::new(spec, Some(secs(120.0))).unwrap();
        let reg = dir.path().join("s.addr");
        let h = b.submit(&reg).await.unwrap();
        let mut addr = None;
        for _ in 0..200 {
            if let Some(a) = std::fs::read_to_string(&reg)
                .ok()
                .as_deref()
                .and_then(uqlb::models::parse_registration)
            {
                addr = Some(a);
                break;
            }
            tokio::time::sleep(Duration::from_millis(25)).await;
        }
        let addr = addr.expect("registration file");
        let out = uqlb::protocol::HttpModel::new(&addr, "modelname")
            .evaluate(vec![vec![3.0]], Default::default())
            .await
            .unwrap();
        assert_eq!(out, vec![vec![3.0]]);
        b.cancel(h).await.unwrap();
        assert_eq!(b.status(h).await.unwrap(), JobState::Cancelled);
        b.cancel(h).await.unwrap();
    });
}

#[test]
fn process_backend_reports_immediate_exit_and_time_limit() {
    block_on(async {
        let dir = tempfile::tempdir().unwrap();
        let b = shell_job(AllocationMode::PerJob, "exit 3", 30.0);
        let h = b.submit(&dir.path().join("a.addr")).await.unwrap();
        assert!(matches!(wait_terminal(&b, h).await, JobState::Exited(_)));

        let b = shell_job(AllocationMode::PerJob, "sleep 30", 0.3);
        let h = b.submit(&dir.path().join("b.addr")).await.unwrap();
        assert_eq!(wait_terminal(&b, h).await, JobState::TimeLimitExceeded);
    });
}

#[test]
fn process_backend_rejects_empty_command() {
    let spec = JobSpec::new(AllocationMode::PerJob, secs(1.0), secs(1.0));
    assert!(ProcessBackend::new(spec, None).is_err());
}
