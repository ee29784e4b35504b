//! Multinomial logistic-regression head over frozen features.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, OwlError, Result};
use crate::scalar::{dot, softmax, Scalar};
use crate::types::ClassId;

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.2,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead<T> {
    pub dim: usize,
    pub class_ids: Vec<ClassId>,
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(dim: usize, class_ids: Vec<ClassId>) -> Self {
        let c = class_ids.len();
        Self {
            dim,
            class_ids,
            weights: vec![vec![T::zero(); dim]; c],
            bias: vec![T::zero(); c],
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_ids.len()
    }

    pub fn logits(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| dot(w, f) + b)
            .collect())
    }

    pub fn probabilities(&self, f: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.logits(f)?))
    }

    /// Fits a fresh head by softmax cross-entropy. `groups` pairs each class id
    /// with its training vectors; weights start at zero so training is
    /// deterministic.
    pub fn fit(dim: usize, groups: &[(ClassId, &[Vec<T>])], opts: &TrainOptions) -> Result<Self> {
        if groups.is_empty() {
            return Err(OwlError::InsufficientData("linear head needs at least one class".into()));
        }
        let mut head = Self::zeros(dim, groups.iter().map(|(c, _)| *c).collect());
        let samples: Vec<(usize, &Vec<T>)> = groups
            .iter()
            .enumerate()
            .flat_map(|(ci, (_, rows))| rows.iter().map(move |r| (ci, r)))
            .collect();
        if samples.is_empty() {
            return Err(OwlError::InsufficientData("linear head needs training vectors".into()));
        }
        for (_, r) in &samples {
            check_dim(dim, r.len())?;
        }
        let c = head.class_count();
        let n = T::of_usize(samples.len());
        let lr = T::of(opts.learning_rate);
        let l2 = T::of(opts.l2);
        let mut grad_w = vec![vec![T::zero(); dim]; c];
        let mut grad_b = vec![T::zero(); c];
        for _ in 0..opts.epochs {
            grad_w.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x = T::zero()));
            grad_b.iter_mut().for_each(|x| *x = T::zero());
            for &(target, x) in &samples {
                let p = softmax(&head.logits(x)?);
                for k in 0..c {
                    let err = p[k] - if k == target { T::one() } else { T::zero() };
                    grad_b[k] = grad_b[k] + err;
                    for (g, &xi) in grad_w[k].iter_mut().zip(x.iter()) {
                        *g = *g + err * xi;
                    }
                }
            }
            for k in 0..c {
                head.bias[k] = head.bias[k] - lr * grad_b[k] / n;
                for (w, &g) in head.weights[k].iter_mut().zip(&grad_w[k]) {
                    *w = *w - lr * (g / n + l2 * *w);
                }
            }
        }
        Ok(head)
    }

    pub fn accuracy(&self, groups: &[(ClassId, &[Vec<T>])]) -> Result<f64> {
        let mut hits = 0usize;
        let mut total = 0usize;
        for (cid, rows) in groups {
            for r in rows.iter() {
                let l = self.logits(r)?;
                let best = crate::scalar::argmax(&l).map(|i| self.class_ids[i]);
                hits += usize::from(best == Some(*cid));
                total += 1;
            }
        }
        Ok(hits as f64 / total.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_blobs_are_learned() {
        let a: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0 + 0.01 * i as f64, 0.0]).collect();
        let b: Vec<Vec<f64>> = (0..10).map(|i| vec![-1.0, 0.02 * i as f64]).collect();
        let c: Vec<Vec<f64>> = (0..10).map(|i| vec![0.0, 1.5 + 0.01 * i as f64]).collect();
        let groups = [(0, a.as_slice()), (1, b.as_slice()), (2, c.as_slice())];
        let head = LinearHead::fit(2, &groups, &TrainOptions::default()).unwrap();
        assert_eq!(head.accuracy(&groups).unwrap(), 1.0);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let head = LinearHead::<f64>::zeros(3, vec![0, 1]);
        assert!(head.logits(&[1.0, 2.0]).is_err());
    }
}
