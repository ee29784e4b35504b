use serde::{Deserialize, Serialize};

use super::{augment_probabilities, check_cluster, check_new_class, AugmentedProbs, MIN_CLASSES};
use crate::error::{check_dim, OwlError, Result};
use crate::linalg::Matrix;
use crate::scalar::{mean_vector, softmax, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    /// Divides the Mahalanobis term inside the softmax.
    pub scale: f64,
    /// Determinant below which the pseudo-inverse path is taken.
    pub singular_floor: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            scale: 10.0,
            singular_floor: 1e-4,
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-9;
const ZERO_DIAG_BOOST: f64 = 1000.0;

/// Exact inverse when `det Σ ≥ floor`; otherwise the pseudo-inverse with
/// `1000 · max(Σ⁺)` placed on every diagonal entry where `Σ⁺` is zero.
pub fn ogmm_robust_inverse<T: Scalar>(sigma: &Matrix<T>, floor: f64) -> Result<Matrix<T>> {
    if !sigma.is_square() {
        return Err(OwlError::InvalidInput("covariance must be square".into()));
    }
    if !sigma.is_symmetric(T::of(SYMMETRY_TOL)) {
        return Err(OwlError::InvalidInput("covariance must be symmetric".into()));
    }
    if sigma.determinant().as_f64() >= floor {
        if let Some(inv) = sigma.inverse() {
            return Ok(inv);
        }
    }
    let mut pinv = sigma.pseudo_inverse_symmetric();
    let n = pinv.rows();
    let max = pinv.max_entry();
    let zero_tol = T::epsilon() * T::of_usize(n.max(1)) * pinv.max_abs();
    let boost = T::of(ZERO_DIAG_BOOST) * max;
    for i in 0..n {
        if pinv[(i, i)].abs() <= zero_tol {
            pinv[(i, i)] = pinv[(i, i)] + boost;
        }
    }
    Ok(pinv)
}

/// Population covariance (divides by n).
pub fn population_covariance<T: Scalar>(points: &[Vec<T>], mean: &[T]) -> Matrix<T> {
    let d = mean.len();
    let mut cov = Matrix::zeros(d, d);
    for p in points {
        let z: Vec<T> = p.iter().zip(mean).map(|(&a, &b)| a - b).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] = cov[(i, j)] + z[i] * z[j];
            }
        }
    }
    let n = T::of_usize(points.len().max(1));
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmClass<T> {
    pub id: ClassId,
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    pub precision: Matrix<T>,
    pub count: usize,
}

/// Open-world Gaussian class model with a robust inverse covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmState<T> {
    pub dim: usize,
    pub config: GmmConfig,
    pub classes: Vec<GmmClass<T>>,
}

impl<T: Scalar> GmmState<T> {
    pub fn new(dim: usize, config: GmmConfig) -> Result<Self> {
        if !(config.scale > 0.0) {
            return Err(OwlError::InvalidConfig("gmm scale must be positive".into()));
        }
        Ok(Self { dim, config, classes: Vec::new() })
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn update(&mut self, cluster: &[Vec<T>], id: ClassId) -> Result<()> {
        check_cluster(Some(self.dim), cluster)?;
        check_new_class(&self.class_ids(), id)?;
        if cluster.len() < 2 {
            return Err(OwlError::InsufficientData("covariance needs at least two points".into()));
        }
        let mean = mean_vector(cluster);
        let covariance = population_covariance(cluster, &mean);
        self.push_class(id, mean, covariance, cluster.len())
    }

    pub fn push_class(&mut self, id: ClassId, mean: Vec<T>, covariance: Matrix<T>, count: usize) -> Result<()> {
        let precision = ogmm_robust_inverse(&covariance, self.config.singular_floor)?;
        self.classes.push(GmmClass { id, mean, covariance, precision, count });
        Ok(())
    }

    pub fn class_probabilities(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        let two_s = T::of(2.0 * self.config.scale);
        let logits: Vec<T> = self
            .classes
            .iter()
            .map(|c| {
                let z: Vec<T> = f.iter().zip(&c.mean).map(|(&a, &b)| a - b).collect();
                -c.precision.quadratic_form(&z) / two_s
            })
            .collect();
        Ok(softmax(&logits))
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.dim, f.len())?;
        if self.classes.len() < MIN_CLASSES {
            return Ok(AugmentedProbs::all_unknown(self.classes.len()));
        }
        augment_probabilities(&self.class_probabilities(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn robust_inverse_examples() {
        let i2 = Matrix::<f64>::identity(2);
        assert_eq!(ogmm_robust_inverse(&i2, 1e-4).unwrap(), i2);
        let singular = Matrix::from_diag(&[1.0f64, 0.0]);
        assert_eq!(ogmm_robust_inverse(&singular, 1e-4).unwrap(), Matrix::from_diag(&[1.0, 1000.0]));
        let asym = Matrix::from_rows(&[[1.0f64, 2.0], [0.0, 1.0]]);
        assert!(ogmm_robust_inverse(&asym, 1e-4).is_err());
    }

    #[test]
    fn robust_inverse_of_spd_matrix_has_small_residual() {
        let a = Matrix::from_rows(&[[2.0f64, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]]);
        let s = ogmm_robust_inverse(&a, 1e-4).unwrap();
        let residual = s.matmul(&a).sub(&Matrix::identity(3)).inf_norm();
        assert!(residual < 1e-6);
    }

    #[test]
    fn covariance_examples() {
        let pts = vec![vec![0.0f64, 0.0], vec![2.0, 0.0]];
        let mut s = GmmState::<f64>::new(2, GmmConfig::default()).unwrap();
        s.update(&pts, 0).unwrap();
        assert_eq!(s.classes[0].mean, vec![1.0, 0.0]);
        assert_eq!(s.classes[0].covariance, Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
        assert_eq!(s.classes[0].precision, Matrix::from_diag(&[1.0, 1000.0]));

        let dup = vec![vec![3.0f64, -1.0]; 5];
        s.update(&dup, 1).unwrap();
        assert_eq!(s.classes[1].covariance, Matrix::zeros(2, 2));
        assert!(s.update(&[vec![1.0, 1.0]], 2).is_err());
    }

    #[test]
    fn covariance_transforms_affinely() {
        let pts = vec![vec![0.0f64, 1.0], vec![2.0, -1.0], vec![1.0, 3.0], vec![-1.0, 0.5]];
        let a = Matrix::from_rows(&[[2.0f64, 1.0], [0.0, -3.0]]);
        let shift = [5.0, -2.0];
        let moved: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| a.matvec(p).iter().zip(shift).map(|(x, s)| x + s).collect())
            .collect();
        let c0 = population_covariance(&pts, &mean_vector(&pts));
        let c1 = population_covariance(&moved, &mean_vector(&moved));
        let expected = a.matmul(&c0).matmul(&a.transpose());
        assert!(c1.sub(&expected).max_abs() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let mut s = GmmState::<f64>::new(2, GmmConfig::default()).unwrap();
        for (i, m) in [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]].iter().enumerate() {
            s.push_class(i, m.to_vec(), Matrix::identity(2), 10).unwrap();
        }
        let q = s.class_probabilities(&[0.0, 0.0]).unwrap();
        let expected = softmax(&[0.0, -0.2, -0.2]);
        for (a, b) in q.iter().zip(&expected) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(q[0], 0.3792, epsilon = 1e-4);
        assert_abs_diff_eq!(q[1], 0.3104, epsilon = 1e-4);

        let q = s.class_probabilities(&[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(q[1], q[2], epsilon = 1e-12);

        let mut two = GmmState::<f64>::new(2, GmmConfig::default()).unwrap();
        two.push_class(0, vec![0.0, 0.0], Matrix::identity(2), 2).unwrap();
        assert_eq!(two.predict(&[0.0, 0.0]).unwrap().p_unknown, 1.0);
    }
}
