//! Makespan, CPU time, scheduling overhead and SLR for a set of task
//! records, plus box statistics for plotting.

mod boxstats;

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use boxstats::{quantile_sorted, BoxStats};

use crate::time::{parse_secs, Nanos};

/// Timestamps of one evaluation. `alloc_t` is the moment resources were
/// granted, when the source knows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub submit_t: Nanos,
    pub start_t: Nanos,
    pub end_t: Nanos,
    pub cpu_time: Nanos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alloc_t: Option<Nanos>,
}

impl TaskRecord {
    pub fn is_ordered(&self) -> bool {
        self.submit_t <= self.start_t && self.start_t <= self.end_t
    }

    /// `end − submit`
    pub fn makespan(&self) -> Nanos {
        self.end_t - self.submit_t
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no task records")]
    EmptyRecords,
    #[error("total compute time is zero")]
    ZeroComputeTime,
    #[error("bad record csv: {0}")]
    Csv(String),
}

/// Makespan after the zero-makespan rule, and the overhead it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Accounting {
    pub makespan: Nanos,
    pub overhead: Nanos,
    /// The raw makespan was below the CPU time and the overhead was clamped.
    pub clamped: bool,
}

static CLAMPS: AtomicU64 = AtomicU64::new(0);

/// Number of overhead clamps since process start.
pub fn clamp_count() -> u64 {
    CLAMPS.load(Ordering::Relaxed)
}

/// `makespan − cpu`. A zero makespan means the log was too coarse to
/// measure it, so the makespan is taken as `cpu` and the overhead as zero.
/// A makespan below `cpu` otherwise clamps to zero overhead with a warning.
pub fn overhead(makespan: Nanos, cpu: Nanos) -> Accounting {
    if makespan == Nanos::ZERO {
        return Accounting {
            makespan: cpu,
            overhead: Nanos::ZERO,
            clamped: false,
        };
    }
    if makespan < cpu {
        CLAMPS.fetch_add(1, Ordering::Relaxed);
        tracing::warn!(
            event = "overhead_clamp",
            makespan = makespan.as_secs_f64(),
            cpu = cpu.as_secs_f64(),
            "negative scheduling overhead clamped to zero"
        );
        return Accounting {
            makespan,
            overhead: Nanos::ZERO,
            clamped: true,
        };
    }
    Accounting {
        makespan,
        overhead: makespan - cpu,
        clamped: false,
    }
}

/// `makespan / Σ cpu_time`
pub fn slr(makespan: Nanos, tasks: &[TaskRecord]) -> Result<f64, MetricsError> {
    let cpu: Nanos = tasks.iter().map(|t| t.cpu_time).sum();
    if cpu == Nanos::ZERO {
        return Err(MetricsError::ZeroComputeTime);
    }
    Ok(makespan.0 as f64 / cpu.0 as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    /// Seconds.
    pub makespan: f64,
    pub total_cpu: f64,
    pub overhead: f64,
    /// `None` when every task reports zero compute time.
    pub slr: Option<f64>,
    /// Mean over tasks of `(end − submit) − cpu`, zero-makespan rule applied.
    pub mean_task_overhead: f64,
    /// Mean over tasks of `(end − submit) / cpu`. Unlike `slr`, stays at or
    /// above 1 when tasks overlap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_task_slr: Option<f64>,
    /// As above but measured from `alloc_t`, i.e. without queue wait.
    /// Present only if every record has an allocation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_task_overhead_excl_queue: Option<f64>,
    pub clamped: bool,
    #[serde(rename = "box")]
    pub box_stats: BTreeMap<String, BoxStats>,
    #[serde(skip)]
    pub per_task: Vec<TaskRecord>,
}

/// Summarizes `records`. The makespan is `wall_span` if given, otherwise the
/// span from the first submission to the last completion.
pub fn summarize(
    records: &[TaskRecord],
    wall_span: Option<Nanos>,
) -> Result<MetricsSummary, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let first = records.iter().map(|r| r.submit_t).min().unwrap_or_default();
    let last = records.iter().map(|r| r.end_t).max().unwrap_or_default();
    let raw = wall_span.unwrap_or(last - first);
    let total_cpu: Nanos = records.iter().map(|r| r.cpu_time).sum();
    let acc = overhead(raw, total_cpu);

    let mut task_makespan = Vec::with_capacity(records.len());
    let mut task_overhead = Vec::with_capacity(records.len());
    let mut task_slr = Vec::new();
    let mut cpu = Vec::with_capacity(records.len());
    let mut wait = Vec::with_capacity(records.len());
    let mut excl_queue = Some(Vec::with_capacity(records.len()));
    let mut clamped = acc.clamped;
    for r in records {
        let a = overhead(r.makespan(), r.cpu_time);
        clamped |= a.clamped;
        task_makespan.push(a.makespan.as_secs_f64());
        task_overhead.push(a.overhead.as_secs_f64());
        cpu.push(r.cpu_time.as_secs_f64());
        wait.push((r.start_t - r.submit_t).as_secs_f64());
        if r.cpu_time > Nanos::ZERO {
            task_slr.push(a.makespan.0 as f64 / r.cpu_time.0 as f64);
        }
        excl_queue = match (excl_queue, r.alloc_t) {
            (Some(mut v), Some(alloc)) => {
                v.push(overhead(r.end_t - alloc, r.cpu_time).overhead.as_secs_f64());
                Some(v)
            }
            _ => None,
        };
    }

    let mean = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.iter().sum::<f64>() / s.len() as f64
    };
    let mut box_stats = BTreeMap::new();
    for (name, values) in [
        ("task_makespan", &task_makespan),
        ("task_overhead", &task_overhead),
        ("task_slr", &task_slr),
        ("cpu_time", &cpu),
        ("start_delay", &wait),
    ] {
        if let Some(b) = BoxStats::from_values(values) {
            box_stats.insert(name.to_owned(), b);
        }
    }
    let mut per_task = records.to_vec();
    per_task.sort_by_key(|r| r.task_id);
    Ok(MetricsSummary {
        n: records.len(),
        makespan: acc.makespan.as_secs_f64(),
        total_cpu: total_cpu.as_secs_f64(),
        overhead: acc.overhead.as_secs_f64(),
        slr: slr(acc.makespan, records).ok(),
        mean_task_overhead: mean(&task_overhead),
        mean_task_slr: (!task_slr.is_empty()).then(|| mean(&task_slr)),
        mean_task_overhead_excl_queue: excl_queue.map(|v| mean(&v)),
        clamped,
        box_stats,
        per_task,
    })
}

const CSV_HEADER: [&str; 6] = [
    "task_id", "submit_t", "start_t", "end_t", "cpu_time", "alloc_t",
];

/// Writes records as CSV with times in decimal seconds (nine fractional
/// digits, so the text is lossless).
pub fn write_records_csv<W: Write>(out: W, records: &[TaskRecord]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.task_id.to_string(),
            r.submit_t.to_string(),
            r.start_t.to_string(),
            r.end_t.to_string(),
            r.cpu_time.to_string(),
            r.alloc_t.map(|t| t.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<TaskRecord>, MetricsError> {
    let mut rd = csv::Reader::from_reader(input);
    let headers = rd
        .headers()
        .map_err(|e| MetricsError::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let idx: Vec<Option<usize>> = CSV_HEADER.iter().map(|h| col(h)).collect();
    if idx[..5].iter().any(Option::is_none) {
        return Err(MetricsError::Csv(format!(
            "header must contain {:?}",
            &CSV_HEADER[..5]
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
        let field = |i: usize| rec.get(idx[i].unwrap_or(usize::MAX)).unwrap_or("").trim();
        let time = |i: usize| {
            parse_secs(field(i)).ok_or_else(|| {
                MetricsError::Csv(format!("row {}: bad {}", line + 2, CSV_HEADER[i]))
            })
        };
        let task_id = field(0)
            .parse()
            .map_err(|_| MetricsError::Csv(format!("row {}: bad task_id", line + 2)))?;
        let alloc_t = if field(5).is_empty() {
            None
        } else {
            Some(time(5)?)
        };
        out.push(TaskRecord {
            task_id,
            submit_t: time(1)?,
            start_t: time(2)?,
            end_t: time(3)?,
            cpu_time: time(4)?,
            alloc_t,
        });
    }
    Ok(out)
}

/// Task records from a balancer event log (JSON lines). A task is the
/// `seq` of an `arrive` event; it starts at its last `dispatch` and ends at
/// a `complete` with a 2xx status. Requests that never succeeded are
/// skipped. CPU time is the logged `compute`, else the dispatch-to-reply
/// span.
pub fn read_event_log<R: BufRead>(input: R) -> Result<Vec<TaskRecord>, MetricsError> {
    #[derive(Default)]
    struct Seen {
        arrive: Option<Nanos>,
        dispatch: Option<Nanos>,
        done: Option<(Nanos, Option<Nanos>)>,
    }
    let bad = |line: usize, m: &str| MetricsError::Csv(format!("event log line {line}: {m}"));
    let mut tasks: BTreeMap<u64, Seen> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| MetricsError::Csv(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| bad(i + 1, &e.to_string()))?;
        let event = v["event"]
            .as_str()
            .ok_or_else(|| bad(i + 1, "missing event"))?;
        if !matches!(event, "arrive" | "dispatch" | "complete") {
            continue;
        }
        let t = v["t"].as_f64().ok_or_else(|| bad(i + 1, "missing t"))?;
        let seq = v["seq"].as_u64().ok_or_else(|| bad(i + 1, "missing seq"))?;
        let t = Nanos::from_secs_f64(t);
        let task = tasks.entry(seq).or_default();
        match event {
            "arrive" => task.arrive = Some(t),
            "dispatch" => task.dispatch = Some(t),
            _ => {
                if v["status"]
                    .as_u64()
                    .is_some_and(|s| (200..300).contains(&s))
                {
                    task.done = Some((t, v["compute"].as_f64().map(Nanos::from_secs_f64)));
                }
            }
        }
    }
    Ok(tasks
        .into_iter()
        .filter_map(|(seq, s)| {
            let (end_t, compute) = s.done?;
            let start_t = s.dispatch?;
            Some(TaskRecord {
                task_id: seq,
                submit_t: s.arrive.unwrap_or(start_t),
                start_t,
                end_t,
                cpu_time: compute.unwrap_or(end_t - start_t),
                alloc_t: None,
            })
        })
        .collect())
}

/// One row per metric: `metric,n,min,q1,median,q3,max,mean,whisker_lo,whisker_hi,outliers`.
pub fn write_box_csv<W: Write>(out: W, summary: &MetricsSummary) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    w.write_record([
        "metric",
        "n",
        "min",
        "q1",
        "median",
        "q3",
        "max",
        "mean",
        "whisker_lo",
        "whisker_hi",
        "outliers",
    ])
    .map_err(err)?;
    for (name, b) in &summary.box_stats {
        let mut row = vec![name.clone(), b.n.to_string()];
        row.extend(
            [
                b.min,
                b.q1,
                b.median,
                b.q3,
                b.max,
                b.mean,
                b.whisker_lo,
                b.whisker_hi,
            ]
            .iter()
            .map(|v| format!("{v:.9}")),
        );
        row.push(b.outliers.len().to_string());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| MetricsError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Nanos {
        Nanos::from_secs_f64(v)
    }

    fn rec(id: u64, submit: f64, start: f64, end: f64, cpu: f64) -> TaskRecord {
        TaskRecord {
            task_id: id,
            submit_t: s(submit),
            start_t: s(start),
            end_t: s(end),
            cpu_time: s(cpu),
            alloc_t: None,
        }
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(overhead(s(100.0), s(60.0)).overhead, s(40.0));
        assert_eq!(overhead(s(5.0), s(5.0)).overhead, Nanos::ZERO);
        let z = overhead(Nanos::ZERO, s(0.4));
        assert_eq!(
            (z.makespan, z.overhead, z.clamped),
            (s(0.4), Nanos::ZERO, false)
        );
    }

    #[test]
    fn clamp_is_counted() {
        let before = clamp_count();
        let a = overhead(s(1.0), s(2.0));
        assert!(a.clamped);
        assert_eq!(a.overhead, Nanos::ZERO);
        assert!(clamp_count() > before);
    }

    #[test]
    fn slr_examples() {
        let tasks = [
            rec(0, 0.0, 0.0, 10.0, 10.0),
            rec(1, 0.0, 0.0, 5.0, 5.0),
            rec(2, 0.0, 0.0, 5.0, 5.0),
        ];
        assert_eq!(slr(s(30.0), &tasks).unwrap(), 1.5);
        assert_eq!(slr(s(20.0), &tasks).unwrap(), 1.0);
        assert_eq!(slr(s(60.0), &tasks).unwrap(), 3.0);
        assert_eq!(
            slr(s(1.0), &[rec(0, 0.0, 0.0, 0.0, 0.0)]),
            Err(MetricsError::ZeroComputeTime)
        );
    }

    #[test]
    fn single_record_summary() {
        let m = summarize(&[rec(0, 0.0, 2.0, 5.0, 3.0)], None).unwrap();
        assert_eq!((m.makespan, m.overhead), (5.0, 2.0));
        assert!((m.slr.unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(summarize(&[], None), Err(MetricsError::EmptyRecords));
    }

    #[test]
    fn csv_round_trip() {
        let mut recs = vec![rec(0, 0.0, 1.5, 2.25, 0.75), rec(1, 0.1, 0.2, 0.3, 0.1)];
        recs[1].alloc_t = Some(s(0.15));
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "task_id,submit_t,start_t,end_t,cpu_time,alloc_t\n0,0.000000000,1.500000000,"
        ));
        assert_eq!(read_records_csv(&buf[..]).unwrap(), recs);
    }
}
