//! Known-vs-unknown gating: softmax, energy and EVM-probability detectors
//! calibrated to a fixed true-positive rate on known validation data, plus
//! an optional bounding-box clamp on feature ranges.

use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::scalar::{log_sum_exp, max_value, softmax, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Softmax,
    Energy,
    #[serde(alias = "evm")]
    EvmScore,
}

impl DetectorKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            DetectorKind::Softmax => "SM",
            DetectorKind::Energy => "Energy",
            DetectorKind::EvmScore => "EVM",
        }
    }
}

pub const MIN_CALIBRATION_SCORES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Energy temperature.
    pub temperature: f64,
    pub target_tpr: f64,
    /// Knownness threshold; set by [`calibrate_threshold`].
    pub threshold: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Softmax,
            temperature: 1.0,
            target_tpr: 0.95,
            threshold: None,
        }
    }
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return Err(OwlError::InvalidConfig(format!("target_tpr {} outside (0, 1]", self.target_tpr)));
        }
        if !(self.temperature > 0.0) {
            return Err(OwlError::InvalidConfig("temperature must be positive".into()));
        }
        if let Some(t) = self.threshold {
            if !t.is_finite() {
                return Err(OwlError::InvalidConfig("threshold must be finite".into()));
            }
        }
        Ok(())
    }

    /// `score ≥ threshold` means known. Uncalibrated detectors are an error.
    pub fn is_known<T: Scalar>(&self, score: T) -> Result<bool> {
        let tau = self
            .threshold
            .ok_or_else(|| OwlError::InvalidConfig("detector used before calibration".into()))?;
        Ok(score.as_f64() >= tau)
    }
}

/// Higher means more likely known. Softmax and energy read logits; the EVM
/// detector reads per-class inclusion probabilities.
pub fn knownness_score<T: Scalar>(config: &DetectorConfig, values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(OwlError::InvalidInput("empty score vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OwlError::InvalidInput("non-finite score vector".into()));
    }
    Ok(match config.kind {
        DetectorKind::Softmax => max_value(&softmax(values)),
        DetectorKind::Energy => {
            let t = T::of(config.temperature);
            let scaled: Vec<T> = values.iter().map(|&l| l / t).collect();
            t * log_sum_exp(&scaled)
        }
        DetectorKind::EvmScore => max_value(values),
    })
}

/// Sets the threshold to the largest value that keeps at least `target_tpr`
/// of the known validation scores at or above it.
pub fn calibrate_threshold<T: Scalar>(config: &DetectorConfig, scores: &[T]) -> Result<DetectorConfig> {
    config.validate()?;
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(OwlError::InsufficientData(format!(
            "{} calibration scores, need at least {MIN_CALIBRATION_SCORES}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(OwlError::InvalidInput("non-finite calibration score".into()));
    }
    let mut sorted: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = sorted.len();
    let tpr = config.target_tpr;
    // smallest count m with m / n ≥ tpr
    let mut m = ((tpr * n as f64).ceil() as usize).clamp(1, n);
    while m > 1 && (m - 1) as f64 / n as f64 >= tpr {
        m -= 1;
    }
    while m < n && (m as f64) / (n as f64) < tpr {
        m += 1;
    }
    let mut out = config.clone();
    out.threshold = Some(sorted[n - m]);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeCheck {
    InRange,
    OutOfRange,
}

/// Per-dimension bounding box around the pretraining features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

pub const DEFAULT_CLAMP_SLACK: f64 = 1.5;

impl<T: Scalar> FeatureBounds<T> {
    /// Learns the per-dimension `[min, max]` box and widens each side by
    /// `(slack − 1) × (max − min)`, so slack 1.5 turns `[0, 2]` into `[−1, 3]`.
    pub fn learn(features: &[Vec<T>], slack: f64) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| OwlError::InsufficientData("bounds need at least one feature".into()))?;
        if slack < 1.0 {
            return Err(OwlError::InvalidConfig("clamp slack must be ≥ 1".into()));
        }
        let mut lower = first.clone();
        let mut upper = first.clone();
        for f in features {
            crate::error::check_dim(lower.len(), f.len())?;
            for (j, &x) in f.iter().enumerate() {
                lower[j] = lower[j].min(x);
                upper[j] = upper[j].max(x);
            }
        }
        let extra = T::of(slack - 1.0);
        for (lo, hi) in lower.iter_mut().zip(upper.iter_mut()) {
            let width = *hi - *lo;
            *lo = *lo - extra * width;
            *hi = *hi + extra * width;
        }
        Ok(Self { lower, upper })
    }

    pub fn check(&self, f: &[T]) -> RangeCheck {
        let inside = f.len() == self.lower.len()
            && f
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&lo, &hi))| x >= lo && x <= hi);
        if inside {
            RangeCheck::InRange
        } else {
            RangeCheck::OutOfRange
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn score_examples() {
        let sm = DetectorConfig::new(DetectorKind::Softmax);
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(knownness_score(&sm, &[2.0f64, 0.0, 0.0]).unwrap(), e2 / (e2 + 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(knownness_score(&sm, &[2.0f64, 0.0, 0.0]).unwrap(), 0.7869, epsilon = 1e-4);

        let en = DetectorConfig::new(DetectorKind::Energy);
        assert_abs_diff_eq!(knownness_score(&en, &[0.0f64, 0.0]).unwrap(), 2f64.ln(), epsilon = 1e-12);

        let evm = DetectorConfig::new(DetectorKind::EvmScore);
        assert_eq!(knownness_score(&evm, &[0.1f64, 0.9, 0.3]).unwrap(), 0.9);
    }

    #[test]
    fn score_rejects_bad_vectors() {
        let sm = DetectorConfig::default();
        assert!(knownness_score::<f64>(&sm, &[]).is_err());
        assert!(knownness_score(&sm, &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_score_is_shift_invariant() {
        let sm = DetectorConfig::default();
        let a = knownness_score(&sm, &[0.3f64, -1.0, 2.2]).unwrap();
        let b = knownness_score(&sm, &[100.3f64, 99.0, 102.2]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    /// Brute force: the largest candidate threshold that keeps the TPR.
    fn brute_threshold(scores: &[f64], tpr: f64) -> f64 {
        let n = scores.len() as f64;
        scores
            .iter()
            .copied()
            .filter(|&t| scores.iter().filter(|&&s| s >= t).count() as f64 / n >= tpr)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn calibration_examples() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        let cfg = calibrate_threshold(&DetectorConfig::default(), &scores).unwrap();
        assert_eq!(brute_threshold(&scores, 0.95), 0.06);
        assert_eq!(cfg.threshold, Some(0.06));

        let flat = vec![0.5f64; 30];
        assert_eq!(calibrate_threshold(&DetectorConfig::default(), &flat).unwrap().threshold, Some(0.5));

        let full = DetectorConfig { target_tpr: 1.0, ..Default::default() };
        assert_eq!(calibrate_threshold(&full, &scores).unwrap().threshold, Some(0.01));

        assert!(calibrate_threshold(&DetectorConfig::default(), &scores[..19]).is_err());
    }

    #[test]
    fn clamp_examples() {
        let train = vec![vec![0.0f64], vec![2.0]];
        let b = FeatureBounds::learn(&train, 1.5).unwrap();
        assert_eq!(b.lower, vec![-1.0]);
        assert_eq!(b.upper, vec![3.0]);
        assert_eq!(b.check(&[2.9]), RangeCheck::InRange);
        assert_eq!(b.check(&[3.1]), RangeCheck::OutOfRange);
        let tight = FeatureBounds::learn(&train, 1.0).unwrap();
        assert_eq!(tight.check(&[1.0]), RangeCheck::InRange);
        assert_eq!(tight.check(&[2.5]), RangeCheck::OutOfRange);
    }

    proptest::proptest! {
        #[test]
        fn calibration_meets_tpr_and_is_tight(
            scores in proptest::collection::vec(0.0f64..1.0, 20..200),
            tpr in 0.05f64..1.0,
        ) {
            let cfg = DetectorConfig { target_tpr: tpr, ..Default::default() };
            let tau = calibrate_threshold(&cfg, &scores).unwrap().threshold.unwrap();
            let n = scores.len() as f64;
            let frac = scores.iter().filter(|&&s| s >= tau).count() as f64 / n;
            proptest::prop_assert!(frac >= tpr);
            if let Some(next) = scores.iter().copied().filter(|&s| s > tau).fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.min(s)))) {
                let frac_next = scores.iter().filter(|&&s| s >= next).count() as f64 / n;
                proptest::prop_assert!(frac_next < tpr);
            }
            proptest::prop_assert_eq!(tau, brute_threshold(&scores, tpr));
        }

        #[test]
        fn energy_is_monotone_in_each_logit(
            logits in proptest::collection::vec(-5.0f64..5.0, 1..8),
            idx in 0usize..8,
            bump in 0.0f64..3.0,
        ) {
            let cfg = DetectorConfig::new(DetectorKind::Energy);
            let i = idx % logits.len();
            let mut raised = logits.clone();
            raised[i] += bump;
            proptest::prop_assert!(knownness_score(&cfg, &raised).unwrap() >= knownness_score(&cfg, &logits).unwrap() - 1e-12);
        }
    }
}
