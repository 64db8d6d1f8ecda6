use std::sync::Arc;
use std::time::Duration;

use uqlb::backends::{AllocationMode, EmulatedBackend, EmulatedConfig};
use uqlb::balancer::{Balancer, BalancerConfig};
use uqlb::dist::Distribution;
use uqlb::models::BenchmarkModel;
use uqlb::protocol::EvaluationRequest;

pub struct Pool {
    pub balancer: Balancer,
    pub backend: Arc<EmulatedBackend>,
    _dir: tempfile::TempDir,
}

/// Synthetic model taking `seconds` per evaluation, one input dimension.
pub fn sleeper(seconds: f64) -> BenchmarkModel {
    BenchmarkModel::Synthetic {
        duration: Distribution::constant(seconds),
        seed: 0,
        input_dim: 1,
    }
}

pub fn fast_config(dir: &std::path::Path, max_servers: usize) -> BalancerConfig {
    BalancerConfig {
        max_servers,
        registration_poll: Duration::from_millis(10),
        registration_timeout: Duration::from_secs(10),
        health_timeout: Duration::from_secs(1),
        health_period: Duration::from_secs(3600),
        ..BalancerConfig::new(dir)
    }
}

pub fn pool_with(emu: EmulatedConfig, tweak: impl FnOnce(&mut BalancerConfig)) -> Pool {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fast_config(dir.path(), 1);
    tweak(&mut cfg);
    let backend = Arc::new(EmulatedBackend::new(emu));
    let balancer = Balancer::new(cfg, backend.clone()).unwrap();
    Pool {
        balancer,
        backend,
        _dir: dir,
    }
}

pub fn pool(model: BenchmarkModel, mode: AllocationMode, max_servers: usize) -> Pool {
    pool_with(EmulatedConfig::new(model, mode), |c| {
        c.max_servers = max_servers
    })
}

pub fn request(x: f64) -> EvaluationRequest {
    EvaluationRequest::new("modelname", vec![vec![x]])
}

pub async fn eval(b: &Balancer, x: f64) -> Result<Vec<Vec<f64>>, uqlb::protocol::ProtocolError> {
    b.evaluate(&request(x)).await
}
