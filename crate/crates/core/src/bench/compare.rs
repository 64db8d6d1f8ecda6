//! Side-by-side comparison of two results trees.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use walkdir::WalkDir;

use super::{BenchError, ExperimentSummary};

/// Overhead reduction factor flagged as three orders of magnitude.
pub const OVERHEAD_RATIO_FLAG: f64 = 1000.0;
/// Fractional makespan reduction flagged as matching the observed 38 %.
pub const MAKESPAN_REDUCTION_FLAG: f64 = 0.38;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub key: String,
    pub makespan_a: f64,
    pub makespan_b: f64,
    /// `b / a`
    pub makespan_ratio: f64,
    /// `1 − b / a`
    pub makespan_reduction: f64,
    /// Mean per-task scheduling overhead.
    pub overhead_a: f64,
    pub overhead_b: f64,
    /// `a / b`: how many times smaller the overhead of `b` is.
    pub overhead_ratio: f64,
    /// Mean per-task SLR.
    pub slr_a: Option<f64>,
    pub slr_b: Option<f64>,
    pub overhead_flag: bool,
    pub makespan_flag: bool,
}

/// Every `summary.json` under `root`, keyed by its directory relative to
/// `root` (`"."` for the root itself).
pub fn load_results(root: &Path) -> Result<BTreeMap<String, ExperimentSummary>, BenchError> {
    if !root.is_dir() {
        return Err(BenchError::Io {
            path: root.to_owned(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a results directory"),
        });
    }
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| BenchError::Config(e.to_string()))?;
        if entry.file_name() != "summary.json" {
            continue;
        }
        let path = entry.path();
        let rel = path
            .parent()
            .and_then(|p| p.strip_prefix(root).ok())
            .unwrap_or(Path::new(""));
        let key = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
        let summary: ExperimentSummary = serde_json::from_str(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        out.insert(if key.is_empty() { ".".to_owned() } else { key }, summary);
    }
    Ok(out)
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == den {
        1.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn compare_summaries(
    a: &BTreeMap<String, ExperimentSummary>,
    b: &BTreeMap<String, ExperimentSummary>,
) -> Result<Vec<CompareRow>, BenchError> {
    if let Some(k) = a
        .keys()
        .find(|k| !b.contains_key(*k))
        .or_else(|| b.keys().find(|k| !a.contains_key(*k)))
    {
        return Err(BenchError::KeyMismatch(k.clone()));
    }
    if a.is_empty() {
        return Err(BenchError::KeyMismatch("<no summaries>".into()));
    }
    Ok(a.iter()
        .map(|(key, sa)| {
            let sb = &b[key];
            let makespan_ratio = ratio(sb.makespan, sa.makespan);
            let overhead_ratio = ratio(sa.mean_task_overhead, sb.mean_task_overhead);
            let makespan_reduction = 1.0 - makespan_ratio;
            CompareRow {
                key: key.clone(),
                makespan_a: sa.makespan,
                makespan_b: sb.makespan,
                makespan_ratio,
                makespan_reduction,
                overhead_a: sa.mean_task_overhead,
                overhead_b: sb.mean_task_overhead,
                overhead_ratio,
                slr_a: sa.mean_task_slr,
                slr_b: sb.mean_task_slr,
                overhead_flag: overhead_ratio >= OVERHEAD_RATIO_FLAG,
                makespan_flag: makespan_reduction >= MAKESPAN_REDUCTION_FLAG,
            }
        })
        .collect())
}

/// Compares the results trees `a` and `b` cell by cell.
pub fn compare(a: &Path, b: &Path) -> Result<Vec<CompareRow>, BenchError> {
    compare_summaries(&load_results(a)?, &load_results(b)?)
}
