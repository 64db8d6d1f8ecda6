//! Emulates per-job and bulk allocation on the same workload and compares
//! the scheduling overhead.
//!
//! ```text
//! cargo run --example scheduler_sim
//! ```

use uqlb::backends::{
    run_sim, AllocationMode, AllocationSpec, JobSpec, SimConfig, SimSetup, Submission,
};
use uqlb::dist::Distribution;
use uqlb::metrics::{summarize, TaskRecord};
use uqlb::Nanos;

fn main() {
    let workload = vec![Nanos::from_secs_f64(0.01); 100];
    let sim = SimConfig {
        queue_wait: Distribution::uniform(1.0, 10.0),
        perjob_launch_overhead: Distribution::constant(2.0),
        bulk_task_overhead: Distribution::constant(0.001),
        env_reinit_overhead: Distribution::uniform(0.5, 2.0),
        node_count: 4,
        rng_seed: 1,
        ..SimConfig::ideal()
    };
    for mode in [AllocationMode::PerJob, AllocationMode::Bulk] {
        let setup = SimSetup {
            sim: sim.clone(),
            job: JobSpec::new(
                mode,
                Nanos::from_secs_f64(60.0),
                Nanos::from_secs_f64(300.0),
            ),
            allocation: AllocationSpec::single_worker(Nanos::from_secs_f64(3600.0)),
            submission: Submission::Depth(2),
        };
        let outcomes = run_sim(&workload, &setup).expect("simulation");
        let records: Vec<TaskRecord> = outcomes.iter().map(|o| o.to_task_record()).collect();
        let s = summarize(&records, None).expect("summary");
        println!(
            "{mode:<6} makespan {:>8.3} s  mean task overhead {:>7.4} s  mean task slr {:>7.2}",
            s.makespan,
            s.mean_task_overhead,
            s.mean_task_slr.unwrap_or(f64::NAN)
        );
    }
}
