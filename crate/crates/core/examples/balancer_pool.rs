//! A balancer in front of in-process model servers: requests are queued
//! first come first served, a crashed server is replaced, and every step
//! lands in the event log.
//!
//! ```text
//! cargo run --example balancer_pool
//! ```

use std::sync::Arc;
use std::time::Duration;

use uqlb::backends::{AllocationMode, EmulatedBackend, EmulatedConfig};
use uqlb::balancer::{Balancer, BalancerConfig};
use uqlb::dist::Distribution;
use uqlb::models::BenchmarkModel;
use uqlb::protocol::EvaluationRequest;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("uqlb-pool-{}", std::process::id()));
    let model = BenchmarkModel::Synthetic {
        duration: Distribution::constant(0.05),
        seed: 0,
        input_dim: 1,
    };
    let backend = Arc::new(EmulatedBackend::new(EmulatedConfig::new(
        model,
        AllocationMode::Bulk,
    )));
    let cfg = BalancerConfig {
        max_servers: 2,
        registration_poll: Duration::from_millis(10),
        ..BalancerConfig::new(&dir)
    };
    let balancer = Balancer::new(cfg, backend.clone())?;

    let batch = |from: usize| {
        let b = balancer.clone();
        async move {
            let reqs = (from..from + 6).map(|i| {
                let b = b.clone();
                async move {
                    b.evaluate(&EvaluationRequest::new("modelname", vec![vec![i as f64]]))
                        .await
                }
            });
            futures::future::join_all(reqs).await
        }
    };
    println!(
        "first batch: {} ok",
        batch(0).await.iter().filter(|r| r.is_ok()).count()
    );

    let victim = backend.live_jobs()[0];
    backend.kill(victim);
    balancer.check_health().await;
    println!(
        "killed {victim}; second batch: {} ok",
        batch(6).await.iter().filter(|r| r.is_ok()).count()
    );

    let s = balancer.snapshot();
    println!("servers started {}, peak busy {}", s.spawns, s.max_busy);
    for e in balancer
        .log()
        .entries()
        .iter()
        .filter(|e| e.event != "preflight_query")
    {
        println!(
            "{:>9.4}  {:<14} {}",
            e.t.as_secs_f64(),
            e.event,
            serde_json::Value::Object(e.fields.clone())
        );
    }
    balancer.shutdown().await;
    let _ = std::fs::remove_dir_all(dir);
    Ok(())
}
