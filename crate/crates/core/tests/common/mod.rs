//! Independent oracles shared by the integration tests. Nothing here calls
//! into the solver code it is used to check; `pool` only wires up a
//! balancer for the tests that exercise it.

#![allow(dead_code)]

pub mod pool;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Determinant by cofactor expansion along the first row.
pub fn cofactor_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    match n {
        0 => 1.0,
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => (0..n)
            .map(|j| {
                let minor: Vec<Vec<f64>> = a[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != j)
                            .map(|(_, v)| *v)
                            .collect()
                    })
                    .collect();
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * a[0][j] * cofactor_det(&minor)
            })
            .sum(),
    }
}

pub fn se_kernel(sf2: f64, ell: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(ell)
        .map(|((x, y), l)| (x - y).powi(2) / (l * l))
        .sum();
    sf2 * (-0.5 * r2).exp()
}

/// GP posterior mean and variance through an explicit dense inverse.
pub fn gp_oracle(
    x: &[Vec<f64>],
    y: &[f64],
    sf2: f64,
    ell: &[f64],
    noise: f64,
    xs: &[f64],
) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, sf2);
    }
    let n = x.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    se_kernel(sf2, ell, &x[i], &x[j]) + if i == j { noise * noise } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let inv = gauss_jordan_inverse(&k);
    let ks: Vec<f64> = x.iter().map(|xi| se_kernel(sf2, ell, xi, xs)).collect();
    let w: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| inv[i][j] * ks[j]).sum())
        .collect();
    let mean = w.iter().zip(y).map(|(a, b)| a * b).sum();
    let var = sf2 - w.iter().zip(&ks).map(|(a, b)| a * b).sum::<f64>();
    (mean, var)
}

/// A random, well-separated GP training problem: midpoint Latin-hypercube
/// inputs in `[0, 1]^d` with lengthscales comparable to the point spacing.
pub struct GpProblem {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub sf2: f64,
    pub ell: Vec<f64>,
    pub noise: f64,
    pub probes: Vec<Vec<f64>>,
}

pub fn gp_problem(seed: u64, noiseless: bool) -> GpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=20);
    let d = rng.random_range(1..=7);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        cols.push(
            strata
                .iter()
                .map(|s| (*s as f64 + 0.5) / n as f64)
                .collect(),
        );
    }
    let x: Vec<Vec<f64>> = (0..n)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sf2 = rng.random_range(0.5..2.0);
    let ell = (0..d)
        .map(|_| rng.random_range(0.5..1.5) / n as f64)
        .collect();
    let noise = if noiseless {
        0.0
    } else {
        rng.random_range(1e-3..0.1)
    };
    let probes = (0..10)
        .map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    GpProblem {
        x,
        y,
        sf2,
        ell,
        noise,
        probes,
    }
}

/// Every way of assigning `durations` (in submission order) to `nodes`
/// machines, each machine running its tasks back to back in order.
/// Returns `(start, end, node)` per task for each assignment.
pub fn all_placements(durations: &[u64], nodes: usize) -> Vec<Vec<(u64, u64, usize)>> {
    let n = durations.len();
    let total = nodes.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let mut free = vec![0u64; nodes];
            let mut out = Vec::with_capacity(n);
            for d in durations {
                let node = code % nodes;
                code /= nodes;
                let start = free[node];
                free[node] = start + d;
                out.push((start, start + d, node));
            }
            out
        })
        .collect()
}

/// The placement an earliest-available list scheduler produces: among all
/// placements, the one whose start times are lexicographically smallest in
/// submission order, ties broken by lexicographically smallest node ids.
pub fn list_schedule_oracle(durations: &[u64], nodes: usize) -> Vec<(u64, u64, usize)> {
    all_placements(durations, nodes)
        .into_iter()
        .min_by(|a, b| {
            let sa: Vec<u64> = a.iter().map(|t| t.0).collect();
            let sb: Vec<u64> = b.iter().map(|t| t.0).collect();
            let na: Vec<usize> = a.iter().map(|t| t.2).collect();
            let nb: Vec<usize> = b.iter().map(|t| t.2).collect();
            sa.cmp(&sb).then(na.cmp(&nb))
        })
        .expect("at least one placement")
}

/// Runs an async test body on a multi-threaded runtime.
pub fn block_on<F: std::future::Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime")
        .block_on(f)
}
