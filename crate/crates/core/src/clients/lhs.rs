//! Latin hypercube designs over a box of named parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub dims: Vec<Dimension>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid parameter box: {0}")]
pub struct BoxError(pub String);

impl ParameterBox {
    pub fn new(dims: impl IntoIterator<Item = (&'static str, f64, f64)>) -> Self {
        ParameterBox {
            dims: dims
                .into_iter()
                .map(|(name, min, max)| Dimension {
                    name: name.to_owned(),
                    min,
                    max,
                })
                .collect(),
        }
    }

    /// `[0, 1]^d`
    pub fn unit(d: usize) -> Self {
        ParameterBox {
            dims: (0..d)
                .map(|i| Dimension {
                    name: format!("x{i}"),
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
        }
    }

    /// The seven GS2 inputs varied in the surrogate training runs.
    pub fn gs2() -> Self {
        ParameterBox::new([
            ("safety_factor", 2.0, 9.0),
            ("magnetic_shear", 0.0, 5.0),
            ("electron_density_gradient", 0.0, 10.0),
            ("electron_temperature_gradient", 0.5, 6.0),
            ("pressure_ratio", 0.0, 0.3),
            ("collision_frequency", 0.0, 0.1),
            ("binormal_wavelength", 0.0, 1.0),
        ])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        if self.dims.is_empty() {
            return Err(BoxError("no dimensions".into()));
        }
        for d in &self.dims {
            if !(d.min.is_finite() && d.max.is_finite() && d.min < d.max) {
                return Err(BoxError(format!(
                    "{}: need min < max, got [{}, {}]",
                    d.name, d.min, d.max
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .dims
                .iter()
                .zip(x)
                .all(|(d, v)| (d.min..=d.max).contains(v))
    }

    /// Maps a point of the box to `[0, 1]^d`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, v)| (v - d.min) / (d.max - d.min))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, v)| d.min + v * (d.max - d.min))
            .collect()
    }
}

/// `n` points with exactly one point per stratum in every dimension.
///
/// Stratum `k` of `n` covers `[k/n, (k+1)/n)` of the normalized range; the
/// point sits at the stratum midpoint, or uniformly inside it with `jitter`.
/// Each dimension's stratum order is an independent seeded shuffle.
pub fn lhs_sample(bx: &ParameterBox, n: usize, seed: u64, jitter: bool) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(bx.dim());
    for d in &bx.dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let width = (d.max - d.min) / n as f64;
        columns.push(
            strata
                .into_iter()
                .map(|k| {
                    let offset = if jitter { rng.random::<f64>() } else { 0.5 };
                    (d.min + (k as f64 + offset) * width).min(d.max)
                })
                .collect(),
        );
    }
    (0..n)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect()
}

/// Stratum index of `v` in a dimension split into `n` equal parts.
pub fn stratum(d: &Dimension, n: usize, v: f64) -> usize {
    let k = ((v - d.min) / (d.max - d.min) * n as f64).floor() as usize;
    k.min(n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_midpoints_in_one_dimension() {
        let pts = lhs_sample(&ParameterBox::unit(1), 4, 3, false);
        let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.125, 0.375, 0.625, 0.875]);
    }

    #[test]
    fn seeded_designs_repeat() {
        let bx = ParameterBox::gs2();
        assert_eq!(lhs_sample(&bx, 50, 9, true), lhs_sample(&bx, 50, 9, true));
        assert_ne!(
            lhs_sample(&bx, 50, 9, false),
            lhs_sample(&bx, 50, 10, false)
        );
    }

    #[test]
    fn gs2_points_stay_in_bounds() {
        let bx = ParameterBox::gs2();
        bx.validate().unwrap();
        for p in lhs_sample(&bx, 200, 1, true) {
            assert!(bx.contains(&p), "{p:?}");
            assert!((2.0..=9.0).contains(&p[0]));
        }
    }

    #[test]
    fn rejects_degenerate_box() {
        let bx = ParameterBox::new([("a", 1.0, 1.0)]);
        assert!(bx.validate().is_err());
    }
}
