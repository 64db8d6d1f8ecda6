//! The flux quantity of interest: a weighted double integral over
//! wavenumber and ballooning angle, evaluated through a remote model.
//!
//! ```text
//! cargo run --example qoi_flux
//! ```

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use uqlb::clients::{qoi_integral, qoi_integral_with, QoIConfig, Rule};
use uqlb::models::FnModel;
use uqlb::protocol::{serve_models, ServeOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let flux = |x: &[f64]| vec![x[0].sin() * (1.0 + x[1] * x[1])];
    let opts = ServeOptions {
        host: Ipv4Addr::LOCALHOST.into(),
        max_concurrent: 8,
    };
    let model = Arc::new(FnModel::new("modelname", 2, 1, flux));
    let server = serve_models(
        vec![model],
        SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
        opts,
    )
    .await?;

    let cfg = QoIConfig {
        depth: 8,
        ..QoIConfig::default()
    };
    let remote = qoi_integral(&server.url(), "modelname", &cfg).await?;
    let local = qoi_integral_with(&cfg, |k, t| flux(&[k, t])[0])?;
    println!("trapezoid 32x32: remote {remote:.10}, local {local:.10}");

    let exact = cfg.prefactor() * (1.0 - 1f64.cos()) * (4.0 / 3.0);
    for n in [4, 8, 16] {
        let gl = QoIConfig {
            rule: Rule::GaussLegendre,
            ky_nodes: n,
            theta0_nodes: n,
            ..cfg.clone()
        };
        let v = qoi_integral_with(&gl, |k, t| flux(&[k, t])[0])?;
        println!(
            "gauss-legendre {n:>2}x{n:<2}: {v:.12} (error {:.1e})",
            (v - exact).abs()
        );
    }
    Ok(())
}
