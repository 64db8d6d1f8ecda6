//! Controlled-duration stand-in for an expensive simulator whose runtime
//! depends on its inputs.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Distribution;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub duration: Distribution,
    pub seed: u64,
}

/// FNV-1a over the bit patterns of `input`, mixed with `seed`.
fn input_hash(seed: u64, input: &[f64]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET ^ seed;
    for x in input {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

impl SyntheticTask {
    /// Duration in seconds for `input`, a pure function of `(seed, input)`.
    pub fn duration_for(&self, input: &[f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(input_hash(self.seed, input));
        self.duration.sample(&mut rng)
    }
}

/// Sleeps for the drawn duration and returns the measured elapsed seconds.
pub fn synthetic_evaluate(task: &SyntheticTask, input: &[f64]) -> Vec<f64> {
    let target = Duration::from_secs_f64(task.duration_for(input));
    let started = Instant::now();
    if !target.is_zero() {
        std::thread::sleep(target);
    }
    vec![started.elapsed().as_secs_f64()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_duration_is_observed() {
        let task = SyntheticTask {
            duration: Distribution::constant(0.05),
            seed: 1,
        };
        let out = synthetic_evaluate(&task, &[1.0, 2.0]);
        assert_eq!(out.len(), 1);
        assert!(out[0] >= 0.05 && out[0] < 0.5, "elapsed {}", out[0]);
    }

    #[test]
    fn same_seed_and_input_repeat() {
        let task = SyntheticTask {
            duration: Distribution::uniform(0.0, 10.0),
            seed: 99,
        };
        let a = task.duration_for(&[0.25, 3.0]);
        assert_eq!(a, task.duration_for(&[0.25, 3.0]));
        assert_ne!(a, task.duration_for(&[0.25, 3.5]));
        let other = SyntheticTask {
            seed: 100,
            ..task.clone()
        };
        assert_ne!(a, other.duration_for(&[0.25, 3.0]));
    }

    #[test]
    fn bimodal_slow_fraction_is_binomial() {
        let task = SyntheticTask {
            duration: Distribution::Bimodal {
                p: 0.9,
                fast: Box::new(Distribution::constant(0.01)),
                slow: Box::new(Distribution::constant(1.0)),
            },
            seed: 2024,
        };
        let draws = 1000;
        let slow = (0..draws)
            .filter(|i| task.duration_for(&[*i as f64]) == 1.0)
            .count();
        // binomial(1000, 0.1): mean 100, sd = sqrt(1000 * 0.1 * 0.9) = 9.487
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        assert!((slow as f64 - 100.0).abs() <= 3.0 * sd, "slow = {slow}");
    }
}
