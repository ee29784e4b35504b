//! Two-parameter Weibull maximum-likelihood fit on margin distances.

use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_KAPPA_MAX: f64 = 100.0;
pub const MARGIN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams<T> {
    pub shape: T,
    pub scale: T,
}

impl<T: Scalar> WeibullParams<T> {
    /// Inclusion probability `exp(−(d/λ)^κ)`.
    pub fn inclusion(&self, distance: T) -> T {
        (-(distance / self.scale).powf(self.shape)).exp()
    }

    pub fn log_likelihood(&self, samples: &[T]) -> f64 {
        weibull_log_likelihood(self.shape.as_f64(), self.scale.as_f64(), samples)
    }
}

pub fn weibull_log_likelihood<T: Scalar>(shape: f64, scale: f64, samples: &[T]) -> f64 {
    samples
        .iter()
        .map(|x| {
            let x = x.as_f64().max(MARGIN_FLOOR);
            let z = x / scale;
            shape.ln() - scale.ln() + (shape - 1.0) * z.ln() - z.powf(shape)
        })
        .sum()
}

/// Sums needed by the profile score of the shape: `Σ yᵏ`, `Σ yᵏ ln y`, `Σ yᵏ ln² y`.
fn power_sums(logs: &[f64], k: f64) -> (f64, f64, f64) {
    logs.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &l| {
        let p = (k * l).exp();
        (a + p, b + p * l, c + p * l * l)
    })
}

/// Fits (κ, λ) by maximum likelihood. The shape solves the profile equation
/// `Σ yᵏ ln y / Σ yᵏ − 1/κ − mean ln y = 0` on data scaled by its maximum,
/// using Newton steps safeguarded by a bisection bracket; the scale follows in
/// closed form. Single or all-equal samples give `λ = value`, `κ = κ_max`.
pub fn fit_weibull<T: Scalar>(margins: &[T], kappa_max: f64) -> Result<WeibullParams<T>> {
    if margins.is_empty() {
        return Err(OwlError::InsufficientData("weibull fit needs at least one margin".into()));
    }
    if margins.iter().any(|m| !m.is_finite() || *m < T::zero()) {
        return Err(OwlError::InvalidInput("margins must be finite and non-negative".into()));
    }
    let xs: Vec<f64> = margins.iter().map(|m| m.as_f64().max(MARGIN_FLOOR)).collect();
    let x_max = xs.iter().copied().fold(f64::MIN, f64::max);
    let x_min = xs.iter().copied().fold(f64::MAX, f64::min);
    if xs.len() == 1 || (x_max - x_min) <= 1e-12 * x_max {
        return Ok(WeibullParams { shape: T::of(kappa_max), scale: T::of(x_max) });
    }
    let logs: Vec<f64> = xs.iter().map(|x| (x / x_max).ln()).collect();
    let n = logs.len() as f64;
    let mean_log = logs.iter().sum::<f64>() / n;
    let score = |k: f64| {
        let (a, b, _) = power_sums(&logs, k);
        b / a - 1.0 / k - mean_log
    };
    // score is increasing in κ, tends to −∞ as κ → 0
    let kappa = if score(kappa_max) <= 0.0 {
        kappa_max
    } else {
        let mut lo = 1e-3;
        while score(lo) > 0.0 {
            lo *= 0.5;
        }
        let mut hi = kappa_max;
        let mut k = 1.0f64.clamp(lo, hi);
        for _ in 0..200 {
            let (a, b, c) = power_sums(&logs, k);
            let g = b / a - 1.0 / k - mean_log;
            if g.abs() < 1e-14 {
                break;
            }
            if g > 0.0 {
                hi = k;
            } else {
                lo = k;
            }
            let dg = (c * a - b * b) / (a * a) + 1.0 / (k * k);
            let newton = k - g / dg;
            k = if newton > lo && newton < hi && dg > 0.0 { newton } else { 0.5 * (lo + hi) };
            if (hi - lo) <= 1e-15 * hi {
                break;
            }
        }
        k
    };
    let (a, _, _) = power_sums(&logs, kappa);
    let scale = x_max * (a / n).powf(1.0 / kappa);
    Ok(WeibullParams { shape: T::of(kappa), scale: T::of(scale) })
}
