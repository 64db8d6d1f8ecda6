use std::io::Write;
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use uqlb::metrics::{
    overhead, read_records_csv, slr, summarize, write_box_csv, write_records_csv, BoxStats,
    TaskRecord,
};
use uqlb::Nanos;

fn rec(id: u64, submit: f64, start: f64, end: f64, cpu: f64) -> TaskRecord {
    TaskRecord {
        task_id: id,
        submit_t: Nanos::from_secs_f64(submit),
        start_t: Nanos::from_secs_f64(start),
        end_t: Nanos::from_secs_f64(end),
        cpu_time: Nanos::from_secs_f64(cpu),
        alloc_t: None,
    }
}

#[test]
fn overhead_cases() {
    let s = Nanos::from_secs_f64;
    assert_eq!(overhead(s(100.0), s(60.0)).overhead, s(40.0));
    assert_eq!(overhead(s(5.0), s(5.0)).overhead, Nanos::ZERO);
    let z = overhead(Nanos::ZERO, s(0.4));
    assert_eq!(
        (z.makespan, z.overhead, z.clamped),
        (s(0.4), Nanos::ZERO, false)
    );
}

#[test]
fn zero_makespan_record_reports_its_cpu() {
    let s = summarize(&[rec(0, 0.0, 0.0, 0.0, 0.4)], None).unwrap();
    assert_eq!((s.makespan, s.overhead), (0.4, 0.0));
    assert_eq!(s.mean_task_slr, Some(1.0));
}

#[test]
fn by_hand_summary() {
    let s = summarize(&[rec(0, 0.0, 2.0, 5.0, 3.0)], None).unwrap();
    assert_eq!((s.makespan, s.overhead, s.total_cpu), (5.0, 2.0, 3.0));
    assert!((s.slr.unwrap() - 5.0 / 3.0).abs() < 1e-15);
}

#[test]
fn slr_cases() {
    let tasks = [
        rec(0, 0.0, 0.0, 10.0, 10.0),
        rec(1, 0.0, 0.0, 5.0, 5.0),
        rec(2, 0.0, 0.0, 5.0, 5.0),
    ];
    assert_eq!(slr(Nanos::from_secs_f64(30.0), &tasks).unwrap(), 1.5);
    assert_eq!(slr(Nanos::from_secs_f64(20.0), &tasks).unwrap(), 1.0);
    assert_eq!(slr(Nanos::from_secs_f64(60.0), &tasks).unwrap(), 3.0);
    assert!(slr(Nanos::from_secs_f64(1.0), &[rec(0, 0.0, 0.0, 0.0, 0.0)]).is_err());
    assert!(summarize(&[], None).is_err());
}

#[test]
fn identical_records_have_degenerate_boxes() {
    let rs: Vec<TaskRecord> = (0..9).map(|i| rec(i, 0.0, 1.0, 3.0, 2.0)).collect();
    let s = summarize(&rs, Some(Nanos::from_secs_f64(30.0))).unwrap();
    for b in s.box_stats.values() {
        assert!(b.q1 == b.median && b.median == b.q3 && b.outliers.is_empty());
    }
    assert_eq!(s.makespan, 30.0);
}

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn every_clamp_emits_a_warning() {
    let cap = Capture::default();
    let writer = cap.clone();
    let subscriber = tracing_subscriber::fmt()
        .with_writer(move || writer.clone())
        .with_ansi(false)
        .finish();
    tracing::subscriber::with_default(subscriber, || {
        let s = Nanos::from_secs_f64;
        assert!(overhead(s(1.0), s(2.0)).clamped);
        assert!(overhead(s(3.0), s(4.0)).clamped);
        assert!(!overhead(s(5.0), s(4.0)).clamped);
    });
    let text = String::from_utf8(cap.0.lock().unwrap().clone()).unwrap();
    assert_eq!(text.matches("overhead_clamp").count(), 2, "{text}");
}

#[test]
fn csv_outputs_have_documented_headers() {
    let rs = vec![rec(0, 0.0, 0.5, 1.0, 0.5), rec(1, 0.1, 1.0, 2.0, 1.0)];
    let mut buf = Vec::new();
    write_records_csv(&mut buf, &rs).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("task_id,submit_t,start_t,end_t,cpu_time"));
    assert_eq!(read_records_csv(&buf[..]).unwrap(), rs);
    let mut boxes = Vec::new();
    write_box_csv(&mut boxes, &summarize(&rs, None).unwrap()).unwrap();
    assert!(String::from_utf8(boxes).unwrap().lines().count() > 1);
}

fn record() -> impl Strategy<Value = TaskRecord> {
    (
        0u64..1_000_000_000,
        0u64..1_000_000_000,
        0u64..1_000_000_000,
        1u64..1_000_000_000,
    )
        .prop_map(|(s, w, r, c)| TaskRecord {
            task_id: 0,
            submit_t: Nanos(s),
            start_t: Nanos(s + w),
            end_t: Nanos(s + w + r + c),
            cpu_time: Nanos(c),
            alloc_t: None,
        })
}

proptest! {
    #[test]
    fn slr_times_cpu_is_makespan(m in 1u64..u32::MAX as u64, cpus in prop::collection::vec(1u64..1_000_000, 1..20)) {
        let tasks: Vec<TaskRecord> =
            cpus.iter().map(|c| TaskRecord { cpu_time: Nanos(*c), ..rec(0, 0.0, 0.0, 0.0, 0.0) }).collect();
        let total: u64 = cpus.iter().sum();
        let r = slr(Nanos(m), &tasks).unwrap();
        prop_assert!((r * total as f64 - m as f64).abs() <= m as f64 * 4.0 * f64::EPSILON);
    }

    #[test]
    fn summary_is_permutation_invariant(mut rs in prop::collection::vec(record(), 1..30), seed in any::<u64>()) {
        for (i, r) in rs.iter_mut().enumerate() {
            r.task_id = i as u64;
        }
        let a = summarize(&rs, None).unwrap();
        let mut shuffled = rs.clone();
        let n = shuffled.len();
        let mut x = seed;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (x >> 33) as usize % (i + 1));
        }
        let b = summarize(&shuffled, None).unwrap();
        prop_assert_eq!(a.makespan, b.makespan);
        prop_assert_eq!(a.overhead, b.overhead);
        prop_assert_eq!(a.slr, b.slr);
        prop_assert_eq!(a.box_stats, b.box_stats);
    }

    #[test]
    fn per_task_slr_is_at_least_one_for_ordered_records(rs in prop::collection::vec(record(), 1..30)) {
        let s = summarize(&rs, None).unwrap();
        prop_assert!(s.mean_task_slr.unwrap() >= 1.0);
        prop_assert!(s.box_stats["task_slr"].min >= 1.0);
        prop_assert!(s.overhead >= 0.0);
    }

    #[test]
    fn box_stats_are_ordered(v in prop::collection::vec(-1e6..1e6f64, 1..200)) {
        let b = BoxStats::from_values(&v).unwrap();
        prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
        prop_assert!(b.whisker_lo >= b.min && b.whisker_hi <= b.max);
        prop_assert_eq!(b.n, v.len());
    }
}
