//! Weight diagnostics and small summary statistics.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Summary of a set of importance weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    /// Effective sample size `(Σw)² / Σw²`.
    pub ess: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl WeightStats {
    pub fn from_weights<T: Scalar>(weights: &[T]) -> Self {
        if weights.is_empty() {
            return WeightStats {
                ess: 0.0,
                min: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
            };
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for w in weights {
            let w = w.as_f64();
            sum += w;
            sum_sq += w * w;
            min = min.min(w);
            max = max.max(w);
        }
        let ess = if sum_sq > 0.0 {
            sum * sum / sum_sq
        } else {
            0.0
        };
        WeightStats {
            ess,
            min,
            max,
            mean: sum / weights.len() as f64,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Population variance (divide by n).
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn standard_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Linearly interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}
