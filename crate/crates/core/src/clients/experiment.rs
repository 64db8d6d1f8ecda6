//! Fixed queue depth experiment runner: keeps `queue_depth` evaluations in
//! flight until `n_evaluations` have been issued, then drains.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::task::JoinSet;

use super::lhs::{lhs_sample, ParameterBox};
use crate::metrics::TaskRecord;
use crate::models::DEFAULT_MODEL_NAME;
use crate::protocol::{Config, HttpModel, ProtocolError};
use crate::time::Nanos;

/// Where the evaluation inputs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParameterSource {
    Lhs {
        #[serde(rename = "box")]
        bx: ParameterBox,
        #[serde(default)]
        jitter: bool,
    },
    /// Used in order, wrapping around when shorter than the plan.
    Fixed { points: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model_url: String,
    #[serde(default = "default_name")]
    pub model_name: String,
    #[serde(default = "default_n")]
    pub n_evaluations: usize,
    #[serde(default = "default_depth")]
    pub queue_depth: usize,
    #[serde(default)]
    pub seed: u64,
    pub source: ParameterSource,
    #[serde(default = "default_failures")]
    pub max_consecutive_failures: usize,
    /// Per-request timeout, seconds.
    #[serde(default = "default_timeout", with = "crate::time::secs")]
    pub timeout: Nanos,
}

fn default_name() -> String {
    DEFAULT_MODEL_NAME.to_owned()
}
fn default_n() -> usize {
    100
}
fn default_depth() -> usize {
    2
}
fn default_failures() -> usize {
    5
}
fn default_timeout() -> Nanos {
    Nanos(600_000_000_000)
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
}

impl ExperimentPlan {
    pub fn new(model_url: impl Into<String>, source: ParameterSource) -> Self {
        ExperimentPlan {
            model_url: model_url.into(),
            model_name: default_name(),
            n_evaluations: default_n(),
            queue_depth: default_depth(),
            seed: 0,
            source,
            max_consecutive_failures: default_failures(),
            timeout: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidPlan(m));
        if self.queue_depth == 0 {
            return bad("queue_depth must be >= 1".into());
        }
        if self.max_consecutive_failures == 0 {
            return bad("max_consecutive_failures must be >= 1".into());
        }
        match &self.source {
            ParameterSource::Lhs { bx, .. } => bx
                .validate()
                .map_err(|e| ExperimentError::InvalidPlan(e.to_string()))?,
            ParameterSource::Fixed { points } if points.is_empty() && self.n_evaluations > 0 => {
                return bad("fixed parameter list is empty".into())
            }
            ParameterSource::Fixed { .. } => {}
        }
        Ok(())
    }

    /// The `n_evaluations` input vectors in submission order.
    pub fn inputs(&self) -> Vec<Vec<f64>> {
        match &self.source {
            ParameterSource::Lhs { bx, jitter } => {
                if self.n_evaluations == 0 {
                    Vec::new()
                } else {
                    lhs_sample(bx, self.n_evaluations, self.seed, *jitter)
                }
            }
            ParameterSource::Fixed { points } => points
                .iter()
                .cycle()
                .take(self.n_evaluations)
                .cloned()
                .collect(),
        }
    }
}

/// One failed evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub task_id: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    /// Successful evaluations, sorted by task id.
    pub records: Vec<TaskRecord>,
    pub outputs: Vec<(u64, Vec<Vec<f64>>)>,
    pub failures: Vec<Failure>,
    /// First submission to last completion.
    pub wall_span: Nanos,
    /// Set when some evaluation failed; a run that stopped early after
    /// repeated failures is always incomplete.
    pub incomplete: bool,
    /// `(time, evaluations in flight)` after every change.
    pub in_flight_log: Vec<(Nanos, usize)>,
    pub max_in_flight: usize,
}

impl ExperimentOutcome {
    pub fn completed(&self) -> usize {
        self.records.len()
    }
}

struct Done {
    task_id: u64,
    submit: Nanos,
    end: Nanos,
    result: Result<(Vec<Vec<f64>>, Option<Duration>), ProtocolError>,
}

/// Runs `plan` against its model (or a balancer in front of it).
///
/// Each record's `cpu_time` is the compute time the server reports; its
/// `start_t` is the end minus that time. Without a report the whole round
/// trip counts as compute.
pub async fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome, ExperimentError> {
    plan.validate()?;
    let model = Arc::new(
        HttpModel::new(&plan.model_url, plan.model_name.clone()).with_timeout(plan.timeout.into()),
    );
    let inputs = plan.inputs();
    let origin = Instant::now();
    let now = move || Nanos::from(origin.elapsed());

    let mut out = ExperimentOutcome {
        records: Vec::with_capacity(inputs.len()),
        outputs: Vec::new(),
        failures: Vec::new(),
        wall_span: Nanos::ZERO,
        incomplete: false,
        in_flight_log: vec![(Nanos::ZERO, 0)],
        max_in_flight: 0,
    };
    let mut set = JoinSet::new();
    let mut next = 0usize;
    let mut streak = 0usize;
    let mut first_submit = None;
    let mut last_end = Nanos::ZERO;

    loop {
        while !out.incomplete && set.len() < plan.queue_depth && next < inputs.len() {
            let task_id = next as u64;
            let x = inputs[next].clone();
            next += 1;
            let model = model.clone();
            let submit = now();
            first_submit.get_or_insert(submit);
            set.spawn(async move {
                let result = model
                    .evaluate_timed(vec![x], Config::new())
                    .await
                    .map(|t| (t.outputs, t.compute));
                Done {
                    task_id,
                    submit,
                    end: Nanos::from(origin.elapsed()),
                    result,
                }
            });
            out.in_flight_log.push((submit, set.len()));
            out.max_in_flight = out.max_in_flight.max(set.len());
        }
        let Some(joined) = set.join_next().await else {
            break;
        };
        let done = joined.expect("evaluation task panicked");
        out.in_flight_log.push((now(), set.len()));
        last_end = last_end.max(done.end);
        match done.result {
            Ok((outputs, compute)) => {
                streak = 0;
                let span = done.end - done.submit;
                let cpu = compute.map(Nanos::from).unwrap_or(span).min(span);
                out.records.push(TaskRecord {
                    task_id: done.task_id,
                    submit_t: done.submit,
                    start_t: done.end - cpu,
                    end_t: done.end,
                    cpu_time: cpu,
                    alloc_t: None,
                });
                out.outputs.push((done.task_id, outputs));
            }
            Err(e) => {
                tracing::warn!(task = done.task_id, error = %e, "evaluation failed");
                out.failures.push(Failure {
                    task_id: done.task_id,
                    error: e.to_string(),
                });
                streak += 1;
                if streak >= plan.max_consecutive_failures && !out.incomplete {
                    tracing::error!(failures = streak, "aborting experiment");
                    out.incomplete = true;
                }
            }
        }
    }
    if !out.failures.is_empty() {
        out.incomplete = true;
    }
    out.records.sort_by_key(|r| r.task_id);
    out.outputs.sort_by_key(|o| o.0);
    out.failures.sort_by_key(|f| f.task_id);
    out.wall_span = first_submit.map_or(Nanos::ZERO, |s| last_end - s);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_source_wraps() {
        let mut plan = ExperimentPlan::new(
            "x",
            ParameterSource::Fixed {
                points: vec![vec![1.0], vec![2.0]],
            },
        );
        plan.n_evaluations = 5;
        let xs: Vec<f64> = plan.inputs().into_iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn zero_depth_is_invalid() {
        let mut plan = ExperimentPlan::new(
            "x",
            ParameterSource::Lhs {
                bx: ParameterBox::unit(1),
                jitter: false,
            },
        );
        plan.queue_depth = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn plan_toml_defaults() {
        let plan: ExperimentPlan = toml::from_str(
            r#"
            model_url = "http://localhost:4242"
            [source]
            kind = "fixed"
            points = [[0.5]]
            "#,
        )
        .unwrap();
        assert_eq!(plan.n_evaluations, 100);
        assert_eq!(plan.queue_depth, 2);
        assert_eq!(plan.model_name, "modelname");
        assert_eq!(plan.max_consecutive_failures, 5);
    }
}
