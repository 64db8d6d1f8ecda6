//! Bringing a freshly started server into the pool: wait for its
//! registration file, check it answers, and query its model before any
//! evaluation is routed to it.

use std::fs::File;
use std::path::Path;
use std::time::{Duration, Instant};

use serde_json::json;

use super::events::EventLog;
use super::BalancerError;
use crate::backends::{Backend, JobHandle};
use crate::models::parse_registration;
use crate::protocol::{
    decode, encode, health_check, Config, Health, InfoResponse, InputSizesResponse,
    ModelDescriptor, ModelInfoResponse, ModelQuery, OutputSizesResponse, ProtocolError, Transport,
};

#[derive(Debug, Clone)]
pub struct RegistrationOptions {
    pub timeout: Duration,
    pub poll: Duration,
    pub health_timeout: Duration,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        RegistrationOptions {
            timeout: Duration::from_secs(60),
            poll: Duration::from_millis(250),
            health_timeout: Duration::from_secs(2),
        }
    }
}

/// Flushes directory metadata so a file written by another host becomes
/// visible on network filesystems that cache lookups.
fn refresh_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

/// Polls `path` until it holds a `host:port` line, then health-checks that
/// address. When `job` is given, a job that ends before registering is
/// reported as a spawn failure instead of waiting out the timeout.
pub async fn register_from_file(
    path: &Path,
    opts: &RegistrationOptions,
    transport: &Transport,
    job: Option<(&dyn Backend, JobHandle)>,
) -> Result<String, BalancerError> {
    let deadline = Instant::now() + opts.timeout;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    loop {
        refresh_dir(dir);
        if let Some(addr) = std::fs::read_to_string(path)
            .ok()
            .as_deref()
            .and_then(parse_registration)
        {
            return match health_check(transport, &addr, opts.health_timeout).await {
                Health::Healthy => Ok(addr),
                Health::Unhealthy(reason) => Err(BalancerError::UnreachableServer(format!(
                    "{addr}: {reason:?}"
                ))),
            };
        }
        if let Some((backend, handle)) = job {
            if let Ok(state) = backend.status(handle).await {
                if state.is_terminal() {
                    return Err(BalancerError::SpawnFailure(format!(
                        "{handle} ended before registering: {state:?}"
                    )));
                }
            }
        }
        let now = Instant::now();
        if now >= deadline {
            return Err(BalancerError::RegistrationTimeout(opts.timeout));
        }
        tokio::time::sleep(opts.poll.min(deadline - now)).await;
    }
}

/// What the server must look like to join the pool.
#[derive(Debug, Clone, Default)]
pub struct Expectation {
    pub model_name: String,
    pub input_sizes: Option<Vec<usize>>,
    pub output_sizes: Option<Vec<usize>>,
}

/// Queries info, input sizes, output sizes, feature flags and finally info
/// again as a liveness check. Every query is logged as a `preflight_query`
/// event for `endpoint`.
pub async fn preflight(
    transport: &Transport,
    url: &str,
    expect: &Expectation,
    timeout: Duration,
    log: &EventLog,
    endpoint: u64,
) -> Result<ModelDescriptor, BalancerError> {
    let mismatch = |m: String| BalancerError::PreflightMismatch(m);
    let query = encode(&ModelQuery {
        name: expect.model_name.clone(),
        config: Config::new(),
    });
    let note = |q: &str| log.record("preflight_query", json!({"endpoint": endpoint, "query": q}));
    let upstream = |e: ProtocolError| BalancerError::UnreachableServer(format!("{url}: {e}"));

    note("info");
    let info: InfoResponse = get_json(transport, url, "/info", timeout)
        .await
        .map_err(upstream)?;
    if !info.models.iter().any(|m| *m == expect.model_name) {
        return Err(mismatch(format!(
            "server offers {:?}, expected `{}`",
            info.models, expect.model_name
        )));
    }
    note("input-sizes");
    let inputs: InputSizesResponse = post_json(transport, url, "/input-sizes", &query, timeout)
        .await
        .map_err(upstream)?;
    note("output-sizes");
    let outputs: OutputSizesResponse = post_json(transport, url, "/output-sizes", &query, timeout)
        .await
        .map_err(upstream)?;
    note("model-info");
    let features: ModelInfoResponse = post_json(transport, url, "/model-info", &query, timeout)
        .await
        .map_err(upstream)?;
    note("health");
    if let Health::Unhealthy(reason) = health_check(transport, url, timeout).await {
        return Err(BalancerError::UnreachableServer(format!(
            "{url}: {reason:?}"
        )));
    }

    let desc = ModelDescriptor {
        name: expect.model_name.clone(),
        input_sizes: inputs.input_sizes,
        output_sizes: outputs.output_sizes,
        features: features.support,
    };
    desc.validate().map_err(|e| mismatch(e.to_string()))?;
    if let Some(want) = &expect.input_sizes {
        if *want != desc.input_sizes {
            return Err(mismatch(format!(
                "input sizes {:?}, expected {want:?}",
                desc.input_sizes
            )));
        }
    }
    if let Some(want) = &expect.output_sizes {
        if *want != desc.output_sizes {
            return Err(mismatch(format!(
                "output sizes {:?}, expected {want:?}",
                desc.output_sizes
            )));
        }
    }
    Ok(desc)
}

async fn get_json<T: serde::de::DeserializeOwned>(
    t: &Transport,
    url: &str,
    path: &str,
    timeout: Duration,
) -> Result<T, ProtocolError> {
    let reply = t.get(url, path, timeout).await?;
    if !(200..300).contains(&reply.status) {
        return Err(ProtocolError::Unreachable(format!(
            "{path} answered {}",
            reply.status
        )));
    }
    decode(&reply.body)
}

async fn post_json<T: serde::de::DeserializeOwned>(
    t: &Transport,
    url: &str,
    path: &str,
    body: &[u8],
    timeout: Duration,
) -> Result<T, ProtocolError> {
    let reply = t.post(url, path, body.to_vec(), timeout).await?;
    if !(200..300).contains(&reply.status) {
        return Err(ProtocolError::Unreachable(format!(
            "{path} answered {}",
            reply.status
        )));
    }
    decode(&reply.body)
}
