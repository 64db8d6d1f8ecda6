//! Overhead, SLR and box statistics for a hand-made set of task records,
//! written as CSV.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use uqlb::metrics::{summarize, write_box_csv, write_records_csv, TaskRecord};
use uqlb::Nanos;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let s = Nanos::from_secs_f64;
    // (submit, start, end, cpu)
    let rows = [
        (0.0, 1.0, 3.0, 2.0),
        (0.0, 1.5, 2.5, 1.0),
        (1.0, 3.0, 6.0, 3.0),
        (2.0, 3.0, 3.5, 0.5),
    ];
    let records: Vec<TaskRecord> = rows
        .iter()
        .enumerate()
        .map(|(i, &(a, b, c, d))| TaskRecord {
            task_id: i as u64,
            submit_t: s(a),
            start_t: s(b),
            end_t: s(c),
            cpu_time: s(d),
            alloc_t: None,
        })
        .collect();
    let summary = summarize(&records, None)?;
    println!(
        "makespan {} s, cpu {} s, overhead {} s, slr {:?}",
        summary.makespan, summary.total_cpu, summary.overhead, summary.slr
    );
    println!(
        "mean task overhead {} s, mean task slr {:?}",
        summary.mean_task_overhead, summary.mean_task_slr
    );

    let mut out = std::io::stdout();
    write_records_csv(&mut out, &records)?;
    write_box_csv(&mut out, &summary)?;
    Ok(())
}
