//! Latin hypercube design over the gyrokinetic box, evaluated at a fixed
//! queue depth against a served surrogate.
//!
//! ```text
//! cargo run --example lhs_experiment
//! ```

use std::net::{Ipv4Addr, SocketAddr};

use uqlb::clients::{lhs_sample, run_experiment, ExperimentPlan, ParameterBox, ParameterSource};
use uqlb::metrics::summarize;
use uqlb::models::BenchmarkModel;
use uqlb::protocol::{serve_models, ServeOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bx = ParameterBox::gs2();
    for p in lhs_sample(&bx, 4, 7, false) {
        println!("{p:.3?}");
    }

    let model = BenchmarkModel::gp_default(1).build("modelname")?;
    let opts = ServeOptions {
        host: Ipv4Addr::LOCALHOST.into(),
        max_concurrent: 4,
    };
    let server = serve_models(
        vec![model],
        SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
        opts,
    )
    .await?;

    let mut plan = ExperimentPlan::new(server.url(), ParameterSource::Lhs { bx, jitter: true });
    plan.n_evaluations = 50;
    plan.queue_depth = 4;
    let out = run_experiment(&plan).await?;
    let s = summarize(&out.records, Some(out.wall_span))?;
    println!(
        "{} evaluations, at most {} in flight, makespan {:.4} s, first output {:?}",
        out.completed(),
        out.max_in_flight,
        s.makespan,
        out.outputs.first()
    );
    Ok(())
}
