use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{augment_probabilities, check_cluster, check_new_class, AugmentedProbs, MIN_CLASSES};
use crate::error::{check_dim, OwlError, Result};
use crate::linear::{LinearHead, TrainOptions};
use crate::scalar::{softmax, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScailConfig {
    /// Exemplars kept per class (the first ones seen).
    pub buffer_cap: usize,
    pub train: TrainOptions,
}

impl Default for ScailConfig {
    fn default() -> Self {
        Self {
            buffer_cap: 20,
            train: TrainOptions::default(),
        }
    }
}

/// Absolute values sorted descending.
fn sorted_abs<T: Scalar>(w: &[T]) -> Vec<T> {
    let mut a: Vec<T> = w.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| y.partial_cmp(x).expect("finite weights"));
    a
}

/// Mean over classifiers of their descending-sorted absolute weights.
pub fn mean_sorted_abs<T: Scalar>(weights: &[&[T]]) -> Vec<T> {
    let dim = weights.first().map_or(0, |w| w.len());
    let mut acc = vec![T::zero(); dim];
    for w in weights {
        for (a, s) in acc.iter_mut().zip(sorted_abs(w)) {
            *a = *a + s;
        }
    }
    let n = T::of_usize(weights.len().max(1));
    acc.iter().map(|&a| a / n).collect()
}

/// Scales each weight by `current[r] / initial[r]`, `r` being the weight's
/// rank by absolute value within `w` (descending, ties by position). A zero
/// initial statistic leaves that weight unscaled.
pub fn rescale_weights<T: Scalar>(w: &[T], initial: &[T], current: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).expect("finite weights").then(a.cmp(&b)));
    let mut out = w.to_vec();
    for (rank, &j) in order.iter().enumerate() {
        if initial[rank] != T::zero() {
            out[j] = w[j] * current[rank] / initial[rank];
        }
    }
    out
}

fn ratio<T: Scalar>(current: T, initial: T) -> T {
    if initial == T::zero() {
        T::one()
    } else {
        current / initial
    }
}

/// What a class looked like at the step it was learned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScailClass<T> {
    pub id: ClassId,
    pub initial_weights: Vec<T>,
    pub initial_bias: T,
    /// Mean sorted absolute weights of the classes added in the same step.
    pub weight_stat: Vec<T>,
    /// Mean absolute bias of the classes added in the same step.
    pub bias_stat: T,
}

/// Open-world scaling incremental learner over a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScailState<T> {
    pub dim: usize,
    pub config: ScailConfig,
    pub classes: Vec<ScailClass<T>>,
    pub head: LinearHead<T>,
    pub buffer: BTreeMap<ClassId, Vec<Vec<T>>>,
}

impl<T: Scalar> ScailState<T> {
    pub fn new(dim: usize, config: ScailConfig) -> Self {
        Self {
            dim,
            config,
            classes: Vec::new(),
            head: LinearHead::zeros(dim, Vec::new()),
            buffer: BTreeMap::new(),
        }
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.head.class_ids
    }

    /// Trains a head on the play buffer plus the new clusters, keeps the new
    /// classes' weights, restores old classes from their initial weights
    /// rescaled to the new statistics, then refreshes the buffer.
    pub fn fit_step(&mut self, clusters: &[(ClassId, Vec<Vec<T>>)]) -> Result<()> {
        if clusters.is_empty() {
            return Ok(());
        }
        let mut ids: Vec<ClassId> = self.classes.iter().map(|c| c.id).collect();
        for (id, cluster) in clusters {
            check_cluster(Some(self.dim), cluster)?;
            check_new_class(&ids, *id)?;
            ids.push(*id);
        }
        let mut groups: Vec<(ClassId, &[Vec<T>])> = self
            .classes
            .iter()
            .map(|c| (c.id, self.buffer[&c.id].as_slice()))
            .collect();
        groups.extend(clusters.iter().map(|(id, c)| (*id, c.as_slice())));
        let trained = LinearHead::fit(self.dim, &groups, &self.config.train)?;

        let old = self.classes.len();
        let new_weights: Vec<&[T]> = trained.weights[old..].iter().map(|w| w.as_slice()).collect();
        let weight_stat = mean_sorted_abs(&new_weights);
        let bias_stat = trained.bias[old..].iter().map(|b| b.abs()).sum::<T>() / T::of_usize(clusters.len());

        let mut head = LinearHead::zeros(self.dim, ids);
        for (i, c) in self.classes.iter().enumerate() {
            head.weights[i] = rescale_weights(&c.initial_weights, &c.weight_stat, &weight_stat);
            head.bias[i] = c.initial_bias * ratio(bias_stat, c.bias_stat);
        }
        for (k, (id, cluster)) in clusters.iter().enumerate() {
            let i = old + k;
            head.weights[i] = trained.weights[i].clone();
            head.bias[i] = trained.bias[i];
            self.classes.push(ScailClass {
                id: *id,
                initial_weights: trained.weights[i].clone(),
                initial_bias: trained.bias[i],
                weight_stat: weight_stat.clone(),
                bias_stat,
            });
            self.buffer
                .insert(*id, cluster.iter().take(self.config.buffer_cap).cloned().collect());
        }
        self.head = head;
        Ok(())
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.dim, f.len())?;
        if self.classes.len() < MIN_CLASSES {
            return Ok(AugmentedProbs::all_unknown(self.classes.len()));
        }
        augment_probabilities(&softmax(&self.head.logits(f)?))
    }

    pub fn buffer_accuracy(&self) -> Result<f64> {
        let groups: Vec<(ClassId, &[Vec<T>])> = self.buffer.iter().map(|(id, v)| (*id, v.as_slice())).collect();
        if groups.is_empty() {
            return Err(OwlError::InsufficientData("empty play buffer".into()));
        }
        self.head.accuracy(&groups)
    }
}
