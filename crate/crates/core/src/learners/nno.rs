use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_cluster, check_new_class, AugmentedProbs, MIN_CLASSES};
use crate::error::{check_dim, OwlError, Result};
use crate::linalg::Matrix;
use crate::scalar::{mean_vector, softmax, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnoConfig {
    /// Rows of the projection W.
    pub rank: usize,
    /// Gate scale: a class survives when its squared metric distance is below this.
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Exemplars kept per class for refitting W.
    pub exemplar_cap: usize,
}

impl Default for NnoConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            tau: 2.0,
            learning_rate: 0.1,
            epochs: 200,
            exemplar_cap: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnoClass<T> {
    pub id: ClassId,
    pub mean: Vec<T>,
    pub exemplars: Vec<Vec<T>>,
}

/// Open-world nearest non-outlier: a learned low-rank metric over class
/// means with a hard distance gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnoState<T> {
    pub dim: usize,
    pub config: NnoConfig,
    pub w: Matrix<T>,
    pub classes: Vec<NnoClass<T>>,
}

/// `‖W z‖²`
pub fn metric_sq_norm<T: Scalar>(w: &Matrix<T>, z: &[T]) -> T {
    w.matvec(z).iter().map(|&u| u * u).sum()
}

/// Class posteriors `softmax(−½‖W(f − μ_i)‖²)`.
pub fn ncmml_posteriors<T: Scalar>(w: &Matrix<T>, means: &[Vec<T>], f: &[T]) -> Vec<T> {
    let logits: Vec<T> = means
        .iter()
        .map(|m| {
            let z: Vec<T> = f.iter().zip(m).map(|(&a, &b)| a - b).collect();
            -T::of(0.5) * metric_sq_norm(w, &z)
        })
        .collect();
    softmax(&logits)
}

/// Mean cross-entropy of the posteriors and its gradient with respect to W.
/// `samples` pairs a class index into `means` with a feature.
pub fn ncmml_loss_and_grad<T: Scalar>(w: &Matrix<T>, means: &[Vec<T>], samples: &[(usize, &[T])]) -> (T, Matrix<T>) {
    let (r, d) = (w.rows(), w.cols());
    let mut grad = Matrix::zeros(r, d);
    let mut loss = T::zero();
    let half = T::of(0.5);
    for &(y, f) in samples {
        let zs: Vec<Vec<T>> = means
            .iter()
            .map(|m| f.iter().zip(m).map(|(&a, &b)| a - b).collect())
            .collect();
        let us: Vec<Vec<T>> = zs.iter().map(|z| w.matvec(z)).collect();
        let logits: Vec<T> = us
            .iter()
            .map(|u| -half * u.iter().map(|&x| x * x).sum::<T>())
            .collect();
        let lse = crate::scalar::log_sum_exp(&logits);
        loss = loss + lse - logits[y];
        let q = softmax(&logits);
        // d loss / dW = W (z_y z_yᵀ − Σ_i q_i z_i z_iᵀ) = u_y z_yᵀ − Σ_i q_i u_i z_iᵀ
        for (i, (u, z)) in us.iter().zip(&zs).enumerate() {
            let coef = if i == y { T::one() - q[i] } else { -q[i] };
            if coef == T::zero() {
                continue;
            }
            for a in 0..r {
                let cu = coef * u[a];
                for (g, &zb) in grad.row_mut(a).iter_mut().zip(z.iter()) {
                    *g = *g + cu * zb;
                }
            }
        }
    }
    let n = T::of_usize(samples.len().max(1));
    (loss / n, grad.scale(T::one() / n))
}

impl<T: Scalar> NnoState<T> {
    pub fn new(dim: usize, config: NnoConfig, seed: u64) -> Result<Self> {
        if config.rank == 0 || config.rank >= dim {
            return Err(OwlError::InvalidConfig(format!(
                "metric rank {} must satisfy 0 < rank < dim {dim}",
                config.rank
            )));
        }
        if !(config.tau > 0.0) {
            return Err(OwlError::InvalidConfig("nno tau must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let data = (0..config.rank * dim)
            .map(|_| T::of(rng.random_range(-1.0..1.0) * scale))
            .collect();
        Ok(Self {
            dim,
            w: Matrix::from_vec(config.rank, dim, data),
            config,
            classes: Vec::new(),
        })
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    fn means(&self) -> Vec<Vec<T>> {
        self.classes.iter().map(|c| c.mean.clone()).collect()
    }

    /// Appends the clusters as classes and refits W once three or more
    /// classes are stored.
    pub fn update(&mut self, clusters: &[(ClassId, Vec<Vec<T>>)]) -> Result<()> {
        for (id, cluster) in clusters {
            check_cluster(Some(self.dim), cluster)?;
            check_new_class(&self.class_ids(), *id)?;
            self.classes.push(NnoClass {
                id: *id,
                mean: mean_vector(cluster),
                exemplars: cluster.iter().take(self.config.exemplar_cap).cloned().collect(),
            });
        }
        if self.classes.len() >= MIN_CLASSES && self.classes.iter().all(|c| c.exemplars.len() >= 2) {
            self.ncmml_fit()?;
        }
        Ok(())
    }

    /// Full-batch gradient descent on the stored exemplars; the step halves
    /// whenever it would raise the loss, so the loss never increases.
    /// Returns the loss after each epoch.
    pub fn ncmml_fit(&mut self) -> Result<Vec<T>> {
        if self.classes.len() < MIN_CLASSES {
            return Err(OwlError::InsufficientData(format!(
                "metric learning needs {MIN_CLASSES} classes, have {}",
                self.classes.len()
            )));
        }
        let means = self.means();
        let samples: Vec<(usize, &[T])> = self
            .classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.exemplars.iter().map(move |e| (i, e.as_slice())))
            .collect();
        let mut step = T::of(self.config.learning_rate);
        let (mut loss, mut grad) = ncmml_loss_and_grad(&self.w, &means, &samples);
        let mut history = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let mut accepted = false;
            for _ in 0..40 {
                let trial = self.w.sub(&grad.scale(step));
                let (trial_loss, trial_grad) = ncmml_loss_and_grad(&trial, &means, &samples);
                if trial_loss <= loss {
                    self.w = trial;
                    loss = trial_loss;
                    grad = trial_grad;
                    accepted = true;
                    break;
                }
                step = step * T::of(0.5);
            }
            history.push(loss);
            if !accepted {
                break;
            }
        }
        Ok(history)
    }

    pub fn training_accuracy(&self) -> f64 {
        let means = self.means();
        let mut hits = 0usize;
        let mut total = 0usize;
        for (i, c) in self.classes.iter().enumerate() {
            for e in &c.exemplars {
                let q = ncmml_posteriors(&self.w, &means, e);
                hits += usize::from(crate::scalar::argmax(&q) == Some(i));
                total += 1;
            }
        }
        hits as f64 / total.max(1) as f64
    }

    /// Posteriors multiplied by the gate `‖W(f − μ_i)‖² < τ`.
    pub fn gated_posteriors(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        let q = ncmml_posteriors(&self.w, &self.means(), f);
        let tau = T::of(self.config.tau);
        Ok(self
            .classes
            .iter()
            .zip(q)
            .map(|(c, qi)| {
                let z: Vec<T> = f.iter().zip(&c.mean).map(|(&a, &b)| a - b).collect();
                if metric_sq_norm(&self.w, &z) < tau {
                    qi
                } else {
                    T::zero()
                }
            })
            .collect())
    }

    /// All unknown when every class is gated out, otherwise the surviving
    /// posteriors renormalized with zero unknown mass.
    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.dim, f.len())?;
        if self.classes.len() < MIN_CLASSES {
            return Ok(AugmentedProbs::all_unknown(self.classes.len()));
        }
        let q = self.gated_posteriors(f)?;
        let total: T = q.iter().copied().sum();
        if total <= T::zero() {
            return Ok(AugmentedProbs::all_unknown(q.len()));
        }
        Ok(AugmentedProbs {
            p_unknown: T::zero(),
            p_classes: q.iter().map(|&x| x / total).collect(),
        })
    }
}
