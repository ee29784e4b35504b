//! Two-sided paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{OwlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
    /// Differences have zero variance but a nonzero mean: the statistic is
    /// infinite and `p_value` is reported as 0.
    pub degenerate: bool,
}

/// Tests `a − b` against zero with `n − 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(OwlError::InvalidInput(format!("unpaired samples: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(OwlError::InsufficientData("paired t-test needs at least two pairs".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(OwlError::InvalidInput("non-finite score".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            PairedTTest { n, mean_difference: 0.0, t: 0.0, p_value: 1.0, degenerate: false }
        } else {
            PairedTTest { n, mean_difference: mean, t: mean.signum() * f64::INFINITY, p_value: 0.0, degenerate: true }
        });
    }
    let t = mean / (var.sqrt() / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| OwlError::InvalidInput(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(PairedTTest { n, mean_difference: mean, t, p_value, degenerate: false })
}
