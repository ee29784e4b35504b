use serde::{Deserialize, Serialize};

use super::{augment_probabilities, check_cluster, check_new_class, AugmentedProbs, MIN_CLASSES};
use crate::error::{check_dim, Result};
use crate::scalar::{dist, mean_vector, softmax, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcmClass<T> {
    pub id: ClassId,
    pub mean: Vec<T>,
    pub count: usize,
}

/// Open-world nearest class mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcmState<T> {
    pub dim: usize,
    pub classes: Vec<NcmClass<T>>,
}

impl<T: Scalar> NcmState<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, classes: Vec::new() }
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn update(&mut self, cluster: &[Vec<T>], id: ClassId) -> Result<()> {
        check_cluster(Some(self.dim), cluster)?;
        check_new_class(&self.class_ids(), id)?;
        self.classes.push(NcmClass {
            id,
            mean: mean_vector(cluster),
            count: cluster.len(),
        });
        Ok(())
    }

    /// Softmax over negative Euclidean distances to the class means.
    pub fn class_probabilities(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        let neg: Vec<T> = self.classes.iter().map(|c| -dist(f, &c.mean)).collect();
        Ok(softmax(&neg))
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.dim, f.len())?;
        if self.classes.len() < MIN_CLASSES {
            return Ok(AugmentedProbs::all_unknown(self.classes.len()));
        }
        augment_probabilities(&self.class_probabilities(f)?)
    }
}
