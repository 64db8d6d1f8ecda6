//! Runs a built-in suite through the scheduler emulator for both modes and
//! compares the results trees.
//!
//! ```text
//! cargo run --example bench_suite -- synthetic-gs2
//! ```

use uqlb::backends::AllocationMode;
use uqlb::bench::{compare, run_suite, Launcher, RunOptions, Suite};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "synthetic-gs2".into());
    let suite = Suite::resolve(&name)?;
    let out = std::env::temp_dir().join(format!("uqlb-results-{}", std::process::id()));
    let mut opts = RunOptions::new(&out, Launcher::Sim);
    opts.modes = vec![AllocationMode::PerJob, AllocationMode::Bulk];
    let report = run_suite(&suite, &opts).await?;
    for (dir, s) in &report.cells {
        println!(
            "{:<6} depth {:<3} makespan {:>9.4} s  -> {}",
            s.mode,
            s.depth,
            s.makespan,
            dir.display()
        );
    }
    let root = out.join(&suite.name);
    for row in compare(&root.join("perjob"), &root.join("bulk"))? {
        println!(
            "depth {:<3} bulk/perjob makespan {:.3}  overhead ratio {:>8.1}  flags: overhead {} makespan {}",
            row.key, row.makespan_ratio, row.overhead_ratio, row.overhead_flag, row.makespan_flag
        );
    }
    std::fs::remove_dir_all(out)?;
    Ok(())
}
