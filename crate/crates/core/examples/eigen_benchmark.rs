//! The eigenvalue benchmark: a seeded symmetric matrix diagonalised by
//! cyclic Jacobi.
//!
//! ```text
//! cargo run --release --example eigen_benchmark -- 200
//! ```

use std::time::Instant;

use uqlb::models::{eigen_solve, random_symmetric, EigenTask};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(100);
    let t0 = Instant::now();
    let values = eigen_solve(&EigenTask::new(n, 1))?;
    let a = random_symmetric(n, 1);
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    println!("n = {n}: {:.2?}", t0.elapsed());
    println!("largest {:.6}, smallest {:.6}", values[0], values[n - 1]);
    println!(
        "sum of eigenvalues {:.10} vs trace {:.10}",
        values.iter().sum::<f64>(),
        trace
    );
    Ok(())
}
