//! One-dimensional quadrature rules and their tensor products.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    #[default]
    Trapezoid,
    GaussLegendre,
}

/// Nodes and weights of an `n`-point rule on `[a, b]`.
pub fn nodes(rule: Rule, a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    match rule {
        Rule::Trapezoid => trapezoid(a, b, n),
        Rule::GaussLegendre => {
            let (x, w) = gauss_legendre(n);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            (
                x.iter().map(|t| mid + half * t).collect(),
                w.iter().map(|v| half * v).collect(),
            )
        }
    }
}

/// Composite trapezoid with `n >= 2` equally spaced nodes including both
/// endpoints.
pub fn trapezoid(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "trapezoid needs at least two nodes");
    let h = (b - a) / (n - 1) as f64;
    let x = (0..n)
        .map(|i| if i == n - 1 { b } else { a + i as f64 * h })
        .collect();
    let w = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    (x, w)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, nodes ascending.
///
/// Roots of `P_n` by Newton iteration from the Chebyshev-like guess
/// `cos(π (i + 3/4) / (n + 1/2))`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss-legendre needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let dp = legendre(n, z).1;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `∫_a^b f` with the given rule.
pub fn integrate(rule: Rule, a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = nodes(rule, a, b, n);
    x.iter().zip(&w).map(|(xi, wi)| wi * f(*xi)).sum()
}
