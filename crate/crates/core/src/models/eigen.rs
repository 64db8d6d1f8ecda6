//! Seeded dense symmetric eigenproblem solved with cyclic Jacobi rotations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::linalg::{norm2, Matrix};

pub const DEFAULT_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenTask {
    pub n: usize,
    pub seed: u64,
    /// Residual bound per eigenpair, relative to `‖A‖_F`.
    pub tolerance: f64,
}

impl EigenTask {
    pub fn new(n: usize, seed: u64) -> Self {
        EigenTask {
            n,
            seed,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EigenError {
    #[error("Jacobi iteration did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix must be square and symmetric")]
    NotSymmetric,
    #[error("matrix dimension must be at least 1")]
    Empty,
    #[error("eigenpair residual {0} exceeds the requested tolerance")]
    ResidualTooLarge(f64),
}

/// Eigenvalues in descending order with matching unit eigenvectors stored
/// as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// `(A + Aᵀ)/2` for `A` with entries drawn uniformly from `(-1, 1)`.
pub fn random_symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(-1.0, 1.0).expect("static bounds");
    let a = Matrix::from_fn(n, n, |_, _| dist.sample(&mut rng));
    Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
}

pub fn eigen_solve(task: &EigenTask) -> Result<Vec<f64>, EigenError> {
    Ok(eigen_solve_full(task)?.values)
}

/// Solves the seeded problem and checks every residual against
/// `task.tolerance * ‖A‖_F`.
pub fn eigen_solve_full(task: &EigenTask) -> Result<Eigen, EigenError> {
    if task.n == 0 {
        return Err(EigenError::Empty);
    }
    let a = random_symmetric(task.n, task.seed);
    let eig = jacobi(&a, DEFAULT_MAX_SWEEPS)?;
    let residual = eig.max_residual(&a);
    if residual > task.tolerance * a.frobenius_norm() {
        return Err(EigenError::ResidualTooLarge(residual));
    }
    Ok(eig)
}

impl Eigen {
    /// Largest `‖A v − λ v‖₂` over all pairs.
    pub fn max_residual(&self, a: &Matrix) -> f64 {
        (0..self.values.len())
            .map(|k| {
                let vk = self.vectors.column(k);
                let av = a.matvec(&vk);
                let r: Vec<f64> = av
                    .iter()
                    .zip(&vk)
                    .map(|(x, y)| x - self.values[k] * y)
                    .collect();
                norm2(&r)
            })
            .fold(0.0, f64::max)
    }
}

/// Diagonalizes a symmetric matrix by cyclic Jacobi sweeps. Stops once the
/// off-diagonal mass is at rounding level relative to `n ‖A‖_F`.
pub fn jacobi(a: &Matrix, max_sweeps: usize) -> Result<Eigen, EigenError> {
    let n = a.rows();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    if !a.is_symmetric(1e-12 * a.frobenius_norm().max(1.0)) {
        return Err(EigenError::NotSymmetric);
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let norm = a.frobenius_norm();
    let target = f64::EPSILON * norm * n as f64;

    let mut sweeps = 0;
    while off_diagonal_norm(&m) > target {
        if sweeps == max_sweeps {
            return Err(EigenError::NoConvergence(max_sweeps));
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, &mut v, p, q);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(Eigen { values, vectors })
}

fn off_diagonal_norm(m: &Matrix) -> f64 {
    let n = m.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Applies the rotation that zeroes `m[p][q]`.
fn rotate(m: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let app = m[(p, p)];
    let aqq = m[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.rows();

    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = m[(r, p)];
        let arq = m[(r, q)];
        let new_p = c * arp - s * arq;
        let new_q = s * arp + c * arq;
        m[(r, p)] = new_p;
        m[(p, r)] = new_p;
        m[(r, q)] = new_q;
        m[(q, r)] = new_q;
    }
    for r in 0..n {
        let vrp = v[(r, p)];
        let vrq = v[(r, q)];
        v[(r, p)] = c * vrp - s * vrq;
        v[(r, q)] = s * vrp + c * vrq;
    }
}
