//! Non-negative duration distributions used by the synthetic model and the
//! scheduler emulator. Values are seconds.

use rand::Rng;
use rand_distr::{Distribution as _, LogNormal, Uniform as UniformDist};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `exp(N(mu, sigma^2))`, optionally clamped to `[min, max]`.
    LogNormal {
        mu: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<f64>,
    },
    /// Draws from `fast` with probability `p`, otherwise from `slow`.
    Bimodal {
        p: f64,
        fast: Box<Distribution>,
        slow: Box<Distribution>,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid distribution: {0}")]
pub struct DistributionError(pub String);

impl Distribution {
    pub const ZERO: Distribution = Distribution::Constant { value: 0.0 };

    pub fn constant(value: f64) -> Self {
        Distribution::Constant { value }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Distribution::Uniform { low, high }
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        let bad = |m: String| Err(DistributionError(m));
        match self {
            Distribution::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                bad(format!("constant {value} must be finite and >= 0"))
            }
            Distribution::Uniform { low, high }
                if !(low.is_finite() && high.is_finite() && *low >= 0.0 && low <= high) =>
            {
                bad(format!("uniform({low}, {high}) needs 0 <= low <= high"))
            }
            Distribution::LogNormal {
                mu,
                sigma,
                min,
                max,
            } => {
                if !(mu.is_finite() && sigma.is_finite() && *sigma >= 0.0) {
                    return bad(format!(
                        "lognormal({mu}, {sigma}) needs finite mu and sigma >= 0"
                    ));
                }
                if let (Some(lo), Some(hi)) = (min, max) {
                    if lo > hi {
                        return bad(format!("lognormal clamp [{lo}, {hi}] is empty"));
                    }
                }
                Ok(())
            }
            Distribution::Bimodal { p, fast, slow } => {
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("bimodal p = {p} is not a probability"));
                }
                fast.validate()?;
                slow.validate()
            }
            _ => Ok(()),
        }
    }

    /// Draws one value; the result is always finite and `>= 0`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = match self {
            Distribution::Constant { value } => *value,
            Distribution::Uniform { low, high } => {
                if high > low {
                    UniformDist::new(*low, *high)
                        .map(|u| u.sample(rng))
                        .unwrap_or(*low)
                } else {
                    *low
                }
            }
            Distribution::LogNormal {
                mu,
                sigma,
                min,
                max,
            } => {
                let mut v = LogNormal::new(*mu, *sigma)
                    .map(|d| d.sample(rng))
                    .unwrap_or(mu.exp());
                if let Some(lo) = min {
                    v = v.max(*lo);
                }
                if let Some(hi) = max {
                    v = v.min(*hi);
                }
                v
            }
            Distribution::Bimodal { p, fast, slow } => {
                if rng.random::<f64>() < *p {
                    fast.sample(rng)
                } else {
                    slow.sample(rng)
                }
            }
        };
        if v.is_finite() {
            v.max(0.0)
        } else {
            0.0
        }
    }

    /// The same distribution with every duration multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Distribution {
        match self {
            Distribution::Constant { value } => Distribution::Constant {
                value: value * factor,
            },
            Distribution::Uniform { low, high } => Distribution::Uniform {
                low: low * factor,
                high: high * factor,
            },
            Distribution::LogNormal {
                mu,
                sigma,
                min,
                max,
            } => Distribution::LogNormal {
                mu: mu + factor.ln(),
                sigma: *sigma,
                min: min.map(|v| v * factor),
                max: max.map(|v| v * factor),
            },
            Distribution::Bimodal { p, fast, slow } => Distribution::Bimodal {
                p: *p,
                fast: Box::new(fast.scaled(factor)),
                slow: Box::new(slow.scaled(factor)),
            },
        }
    }

    /// Analytic mean where one exists in closed form.
    pub fn mean(&self) -> Option<f64> {
        match self {
            Distribution::Constant { value } => Some(*value),
            Distribution::Uniform { low, high } => Some(0.5 * (low + high)),
            Distribution::LogNormal {
                mu,
                sigma,
                min: None,
                max: None,
            } => Some((mu + 0.5 * sigma * sigma).exp()),
            Distribution::LogNormal { .. } => None,
            Distribution::Bimodal { p, fast, slow } => {
                Some(p * fast.mean()? + (1.0 - p) * slow.mean()?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Distribution::LogNormal {
            mu: 0.0,
            sigma: 2.0,
            min: Some(0.06),
            max: Some(10.8),
        };
        for _ in 0..2000 {
            let v = d.sample(&mut rng);
            assert!((0.06..=10.8).contains(&v));
        }
        let u = Distribution::uniform(1.0, 10.0);
        for _ in 0..2000 {
            let v = u.sample(&mut rng);
            assert!((1.0..10.0).contains(&v));
        }
    }

    #[test]
    fn scaling_scales_the_mean() {
        let d = Distribution::Bimodal {
            p: 0.25,
            fast: Box::new(Distribution::constant(2.0)),
            slow: Box::new(Distribution::uniform(4.0, 8.0)),
        };
        assert_eq!(d.mean(), Some(0.25 * 2.0 + 0.75 * 6.0));
        let s = d.scaled(0.5);
        assert!((s.mean().unwrap() - 0.5 * d.mean().unwrap()).abs() < 1e-12);
        let ln = Distribution::LogNormal {
            mu: 0.3,
            sigma: 0.4,
            min: None,
            max: None,
        };
        assert!((ln.scaled(3.0).mean().unwrap() - 3.0 * ln.mean().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(Distribution::constant(-1.0).validate().is_err());
        assert!(Distribution::uniform(3.0, 1.0).validate().is_err());
        assert!(Distribution::Bimodal {
            p: 1.5,
            fast: Box::new(Distribution::ZERO),
            slow: Box::new(Distribution::ZERO)
        }
        .validate()
        .is_err());
        assert!(Distribution::uniform(0.0, 0.0).validate().is_ok());
    }

    #[test]
    fn toml_form() {
        let d: Distribution = toml::from_str("kind = \"uniform\"\nlow = 1.0\nhigh = 10.0").unwrap();
        assert_eq!(d, Distribution::uniform(1.0, 10.0));
    }
}
