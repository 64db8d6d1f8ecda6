use serde::{Deserialize, Serialize};

/// Five-number summary with Tukey whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Smallest value at or above `q1 - 1.5 IQR`.
    pub whisker_lo: f64,
    /// Largest value at or below `q3 + 1.5 IQR`.
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

/// The `p`-quantile of sorted data, interpolating linearly at rank
/// `p (n + 1)` (1-based) and clamping ranks outside `[1, n]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let rank = (p * (n + 1) as f64).clamp(1.0, n as f64);
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo >= n {
        sorted[n - 1]
    } else {
        sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
    }
}

impl BoxStats {
    /// `None` for empty input. Non-finite values are ignored.
    pub fn from_values(values: &[f64]) -> Option<BoxStats> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let median = quantile_sorted(&v, 0.5);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = v
            .iter()
            .copied()
            .filter(|x| (lo_fence..=hi_fence).contains(x));
        let (whisker_lo, whisker_hi) = inside
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        let outliers = v
            .iter()
            .copied()
            .filter(|x| *x < lo_fence || *x > hi_fence)
            .collect();
        // summed in sorted order so the result does not depend on input order
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some(BoxStats {
            n: v.len(),
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            mean,
            whisker_lo,
            whisker_hi,
            outliers,
        })
    }
}
