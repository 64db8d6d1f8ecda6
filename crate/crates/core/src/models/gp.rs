//! Gaussian-process regression with a zero mean function and a
//! squared-exponential kernel with one lengthscale per input dimension.
//!
//! The posterior at a test point `x*` is
//!
//! ```text
//! mean     = k(X, x*)ᵀ (K + σₙ² I)⁻¹ y
//! variance = k(x*, x*) − k(X, x*)ᵀ (K + σₙ² I)⁻¹ k(X, x*)
//! ```
//!
//! `K + σₙ² I` is factored once at fit time (Cholesky, O(N³)); each
//! prediction is then two triangular solves.

use serde::{Deserialize, Serialize};

use super::linalg::{back_substitute_transposed, cholesky, dot, forward_substitute, Matrix};

/// Negative variances down to this size are rounding noise and clamp to 0.
pub const VARIANCE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl SeKernel {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>) -> Self {
        SeKernel {
            signal_variance,
            lengthscales,
        }
    }

    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize) -> Self {
        SeKernel {
            signal_variance,
            lengthscales: vec![lengthscale; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `σ_f² exp(−Σ_q (a_q − b_q)² / (2 ℓ_q²))`
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let d = (x - y) / l;
                d * d
            })
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    fn validate(&self) -> Result<(), GpError> {
        let ok = self.signal_variance.is_finite()
            && self.signal_variance > 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| l.is_finite() && *l > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidKernel(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("covariance matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("posterior variance {0} is below the rounding tolerance")]
    NumericalBreakdown(f64),
    #[error("invalid kernel hyperparameters: {0}")]
    InvalidKernel(String),
}

/// A fitted single-output GP.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    kernel: SeKernel,
    noise_sd: f64,
    factor: Matrix,
    alpha: Vec<f64>,
}

/// Fits a GP to training inputs `x` (N rows of dimension d) and targets `y`.
pub fn gp_fit(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    kernel: SeKernel,
    noise_sd: f64,
) -> Result<GpModel, GpError> {
    kernel.validate()?;
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(GpError::InvalidKernel(format!("noise_sd = {noise_sd}")));
    }
    if x.len() != y.len() {
        return Err(GpError::DimensionMismatch(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = kernel.dim();
    if let Some((i, row)) = x.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(GpError::DimensionMismatch(format!(
            "row {i} has {} columns, kernel has {d}",
            row.len()
        )));
    }
    let n = x.len();
    let noise_var = noise_sd * noise_sd;
    let cov = Matrix::from_fn(n, n, |i, j| {
        kernel.eval(&x[i], &x[j]) + if i == j { noise_var } else { 0.0 }
    });
    let factor = cholesky(&cov).map_err(|pivot| GpError::NotPositiveDefinite { pivot })?;
    let alpha = back_substitute_transposed(&factor, &forward_substitute(&factor, &y));
    Ok(GpModel {
        inputs: x,
        targets: y,
        kernel,
        noise_sd,
        factor,
        alpha,
    })
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn kernel(&self) -> &SeKernel {
        &self.kernel
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Lower-triangular Cholesky factor of `K + σₙ² I`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// `(K + σₙ² I)⁻¹ y`
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Posterior `(mean, variance)` at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GpError> {
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch(format!(
                "point has {} dims, model has {}",
                x.len(),
                self.dim()
            )));
        }
        let prior = self.kernel.eval(x, x);
        if self.inputs.is_empty() {
            return Ok((0.0, prior));
        }
        let k_star: Vec<f64> = self
            .inputs
            .iter()
            .map(|xi| self.kernel.eval(xi, x))
            .collect();
        let mean = dot(&k_star, &self.alpha);
        let v = forward_substitute(&self.factor, &k_star);
        let variance = prior - dot(&v, &v);
        if variance >= 0.0 {
            Ok((mean, variance))
        } else if variance >= -VARIANCE_CLAMP {
            Ok((mean, 0.0))
        } else {
            Err(GpError::NumericalBreakdown(variance))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_point() -> GpModel {
        gp_fit(
            vec![vec![0.0]],
            vec![2.0],
            SeKernel::isotropic(1.0, 1.0, 1),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn single_point_fit() {
        let gp = one_point();
        assert_eq!(gp.factor(), &Matrix::from_rows(&[vec![1.0]]));
        assert_eq!(gp.alpha(), &[2.0]);
    }

    #[test]
    fn interpolates_training_point() {
        assert_eq!(one_point().predict(&[0.0]).unwrap(), (2.0, 0.0));
    }

    #[test]
    fn half_correlation_point() {
        // k(0, x) = 0.5 when x = sqrt(2 ln 2) * lengthscale
        let x = (2.0 * std::f64::consts::LN_2).sqrt();
        let (mean, var) = one_point().predict(&[x]).unwrap();
        assert!((mean - 1.0).abs() < 1e-15);
        assert!((var - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_training_set_is_the_prior() {
        let gp = gp_fit(vec![], vec![], SeKernel::isotropic(2.5, 1.0, 3), 0.0).unwrap();
        assert_eq!(gp.predict(&[0.1, 0.2, 0.3]).unwrap(), (0.0, 2.5));
    }

    #[test]
    fn duplicate_points_without_noise_fail() {
        let err = gp_fit(
            vec![vec![1.0], vec![1.0]],
            vec![0.0, 1.0],
            SeKernel::isotropic(1.0, 1.0, 1),
            0.0,
        );
        assert!(matches!(err, Err(GpError::NotPositiveDefinite { .. })));
        // noise makes the same data well posed
        assert!(gp_fit(
            vec![vec![1.0], vec![1.0]],
            vec![0.0, 1.0],
            SeKernel::isotropic(1.0, 1.0, 1),
            0.1
        )
        .is_ok());
    }

    #[test]
    fn dimension_errors() {
        let k = SeKernel::isotropic(1.0, 1.0, 2);
        assert!(matches!(
            gp_fit(vec![vec![1.0]], vec![0.0], k.clone(), 0.0),
            Err(GpError::DimensionMismatch(_))
        ));
        assert!(matches!(
            gp_fit(vec![vec![1.0, 2.0]], vec![], k.clone(), 0.0),
            Err(GpError::DimensionMismatch(_))
        ));
        let gp = gp_fit(vec![vec![1.0, 2.0]], vec![0.5], k, 0.0).unwrap();
        assert!(matches!(
            gp.predict(&[1.0]),
            Err(GpError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(matches!(
            gp_fit(vec![], vec![], SeKernel::isotropic(0.0, 1.0, 1), 0.0),
            Err(GpError::InvalidKernel(_))
        ));
        assert!(matches!(
            gp_fit(vec![], vec![], SeKernel::isotropic(1.0, -1.0, 1), 0.0),
            Err(GpError::InvalidKernel(_))
        ));
    }
}
