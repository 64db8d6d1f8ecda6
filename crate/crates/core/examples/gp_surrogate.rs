//! Fits a squared-exponential Gaussian process and prints its posterior
//! along a line.
//!
//! ```text
//! cargo run --example gp_surrogate
//! ```

use uqlb::models::{gp_fit, SeKernel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0]).collect();
    let y: Vec<f64> = x.iter().map(|p| (6.0 * p[0]).sin()).collect();
    let gp = gp_fit(x, y, SeKernel::isotropic(1.0, 0.2, 1), 1e-3)?;
    for i in 0..=20 {
        let t = -0.25 + 1.5 * i as f64 / 20.0;
        let (m, v) = gp.predict(&[t])?;
        println!(
            "{t:>6.3}  mean {m:>8.4}  sd {:>7.4}  truth {:>8.4}",
            v.sqrt(),
            (6.0 * t).sin()
        );
    }
    Ok(())
}
