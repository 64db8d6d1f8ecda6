//! Serves a custom model over HTTP and calls it through the client.
//!
//! ```text
//! cargo run --example serve_model
//! ```

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;

use uqlb::models::FnModel;
use uqlb::protocol::{serve_models, Config, HttpModel, ServeOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two inputs, one output: a smooth bump
    let bump = FnModel::new("modelname", 2, 1, |x: &[f64]| {
        vec![(-(x[0] * x[0] + x[1] * x[1])).exp()]
    });
    let opts = ServeOptions {
        host: Ipv4Addr::LOCALHOST.into(),
        ..ServeOptions::default()
    };
    let server = serve_models(
        vec![Arc::new(bump)],
        SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
        opts,
    )
    .await?;
    println!("serving on {}", server.url());

    let model = HttpModel::new(&server.url(), "modelname");
    let d = model.descriptor(&Config::new()).await?;
    println!(
        "input sizes {:?}, output sizes {:?}",
        d.input_sizes, d.output_sizes
    );
    for x in [[0.0, 0.0], [0.5, -0.5], [1.0, 1.0]] {
        let y = model.evaluate(vec![x.to_vec()], Config::new()).await?;
        println!("f({x:?}) = {:.6}", y[0][0]);
    }
    Ok(())
}
