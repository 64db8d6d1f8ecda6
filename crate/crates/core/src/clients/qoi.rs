//! Quasi-linear flux quantity of interest: a prefactor times the nested
//! integral of a model output over `(k_y, θ₀)`.
//!
//! ```text
//! Q = P ∫_a^b dk_y (1/θ₀max) ∫_0^θ₀max f(k_y, θ₀) dθ₀,   P = Q₀ Λ^(α−1) / (ρ* c_s)
//! ```

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use super::quadrature::{nodes, Rule};
use crate::protocol::{Config, HttpModel, ProtocolError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QoIConfig {
    pub q0: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub rho_star: f64,
    pub c_s: f64,
    pub ky_range: [f64; 2],
    pub ky_nodes: usize,
    pub theta0_max: f64,
    pub theta0_nodes: usize,
    pub rule: Rule,
    /// Extra model inputs appended after `(k_y, θ₀)`.
    pub fixed_inputs: Vec<f64>,
    /// Evaluations kept in flight against the model.
    pub depth: usize,
}

impl Default for QoIConfig {
    fn default() -> Self {
        QoIConfig {
            q0: 1.0,
            lambda: 1.0,
            alpha: 1.0,
            rho_star: 1.0,
            c_s: 1.0,
            ky_range: [0.0, 1.0],
            ky_nodes: 32,
            theta0_max: 1.0,
            theta0_nodes: 32,
            rule: Rule::Trapezoid,
            fixed_inputs: Vec::new(),
            depth: 2,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QoiError {
    #[error("upstream failure: {0}")]
    UpstreamFailure(#[from] ProtocolError),
    #[error("integrand is {value} at k_y = {k_y}, theta0 = {theta0}")]
    NonFiniteIntegrand { k_y: f64, theta0: f64, value: f64 },
    #[error("invalid QoI config: {0}")]
    InvalidConfig(String),
}

impl QoIConfig {
    pub fn prefactor(&self) -> f64 {
        self.q0 * self.lambda.powf(self.alpha - 1.0) / (self.rho_star * self.c_s)
    }

    pub fn validate(&self) -> Result<(), QoiError> {
        let bad = |m: &str| Err(QoiError::InvalidConfig(m.into()));
        let min_nodes = if self.rule == Rule::Trapezoid { 2 } else { 1 };
        if self.ky_nodes < min_nodes || self.theta0_nodes < min_nodes {
            return bad("node counts too small for the rule");
        }
        if !(self.theta0_max.is_finite() && self.theta0_max > 0.0) {
            return bad("theta0_max must be > 0");
        }
        if !(self.ky_range[0].is_finite() && self.ky_range[1].is_finite()) {
            return bad("k_y range must be finite");
        }
        if !self.prefactor().is_finite() {
            return bad("prefactor is not finite");
        }
        if self.depth == 0 {
            return bad("depth must be >= 1");
        }
        Ok(())
    }

    /// Quadrature points `(k_y, θ₀)` and their combined weights, including
    /// the `1/θ₀max` factor but not the prefactor.
    pub fn grid(&self) -> Vec<([f64; 2], f64)> {
        let (ky, wk) = nodes(self.rule, self.ky_range[0], self.ky_range[1], self.ky_nodes);
        let (th, wt) = nodes(self.rule, 0.0, self.theta0_max, self.theta0_nodes);
        let mut out = Vec::with_capacity(ky.len() * th.len());
        for (k, a) in ky.iter().zip(&wk) {
            for (t, b) in th.iter().zip(&wt) {
                out.push(([*k, *t], a * b / self.theta0_max));
            }
        }
        out
    }

    fn model_input(&self, point: [f64; 2]) -> Vec<f64> {
        let mut v = point.to_vec();
        v.extend_from_slice(&self.fixed_inputs);
        v
    }
}

/// The integral with a local integrand.
pub fn qoi_integral_with(cfg: &QoIConfig, f: impl Fn(f64, f64) -> f64) -> Result<f64, QoiError> {
    cfg.validate()?;
    let mut sum = 0.0;
    for ([k, t], w) in cfg.grid() {
        let v = f(k, t);
        if !v.is_finite() {
            return Err(QoiError::NonFiniteIntegrand {
                k_y: k,
                theta0: t,
                value: v,
            });
        }
        sum += w * v;
    }
    Ok(cfg.prefactor() * sum)
}

/// The integral with the integrand served by `model_name` at `url`. Every
/// grid point is one evaluation; `cfg.depth` of them are in flight at once.
pub async fn qoi_integral(url: &str, model_name: &str, cfg: &QoIConfig) -> Result<f64, QoiError> {
    cfg.validate()?;
    let model = HttpModel::new(url, model_name);
    let grid = cfg.grid();
    let values: Vec<f64> = stream::iter(grid.iter().map(|(p, _)| {
        let model = &model;
        let input = cfg.model_input(*p);
        async move {
            let out = model.evaluate(vec![input], Config::new()).await?;
            Ok::<f64, QoiError>(
                out.first()
                    .and_then(|v| v.first())
                    .copied()
                    .unwrap_or(f64::NAN),
            )
        }
    }))
    .buffered(cfg.depth)
    .try_collect()
    .await?;
    let mut sum = 0.0;
    for ((p, w), v) in grid.iter().zip(values) {
        if !v.is_finite() {
            return Err(QoiError::NonFiniteIntegrand {
                k_y: p[0],
                theta0: p[1],
                value: v,
            });
        }
        sum += w * v;
    }
    Ok(cfg.prefactor() * sum)
}
