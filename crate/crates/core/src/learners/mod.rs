//! Open-world incremental learners for discovered classes.
//!
//! Every learner reports an [`AugmentedProbs`]: an explicit unknown slot plus
//! one probability per stored class. With fewer than [`MIN_CLASSES`] classes
//! the distance/linear learners put all mass on unknown.

mod cbcl;
mod gmm;
mod ncm;
mod nno;
mod scail;

pub use cbcl::{CbclConfig, CbclState};
pub use gmm::{ogmm_robust_inverse, GmmConfig, GmmState};
pub use ncm::NcmState;
pub use nno::{metric_sq_norm, ncmml_loss_and_grad, ncmml_posteriors, NnoConfig, NnoState};
pub use scail::{mean_sorted_abs, rescale_weights, ScailConfig, ScailState};

use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::evm::LcEvmLearner;
use crate::scalar::{argmax, Scalar};
use crate::types::ClassId;

pub const MIN_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedProbs<T> {
    pub p_unknown: T,
    /// Ordered like the owning learner's class list.
    pub p_classes: Vec<T>,
}

impl<T: Scalar> AugmentedProbs<T> {
    pub fn all_unknown(classes: usize) -> Self {
        Self {
            p_unknown: T::one(),
            p_classes: vec![T::zero(); classes],
        }
    }

    pub fn max_class(&self) -> T {
        self.p_classes.iter().copied().fold(T::zero(), T::max)
    }

    pub fn argmax_class(&self) -> Option<usize> {
        argmax(&self.p_classes)
    }

    /// `[p_unknown, p_classes...]`
    pub fn to_vec(&self) -> Vec<T> {
        std::iter::once(self.p_unknown).chain(self.p_classes.iter().copied()).collect()
    }

    pub fn total(&self) -> T {
        self.p_unknown + self.p_classes.iter().copied().sum::<T>()
    }
}

/// Prepends `1 − max q` as the unknown slot and renormalizes.
pub fn augment_probabilities<T: Scalar>(q: &[T]) -> Result<AugmentedProbs<T>> {
    if q.is_empty() {
        return Err(OwlError::InvalidInput("empty class-probability vector".into()));
    }
    if q.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
        return Err(OwlError::InvalidInput("class probabilities must lie in [0, 1]".into()));
    }
    let max_q = q.iter().copied().fold(T::zero(), T::max);
    let u = T::one() - max_q;
    let z = u + q.iter().copied().sum::<T>();
    if z <= T::zero() {
        // only reachable when q is all zeros and max q is 1, which cannot happen
        return Ok(AugmentedProbs::all_unknown(q.len()));
    }
    Ok(AugmentedProbs {
        p_unknown: u / z,
        p_classes: q.iter().map(|&x| x / z).collect(),
    })
}

pub(crate) fn check_new_class(existing: &[ClassId], id: ClassId) -> Result<()> {
    if existing.contains(&id) {
        return Err(OwlError::DuplicateClass(id));
    }
    Ok(())
}

pub(crate) fn check_cluster<T: Scalar>(dim: Option<usize>, cluster: &[Vec<T>]) -> Result<usize> {
    let first = cluster
        .first()
        .ok_or_else(|| OwlError::InvalidInput("empty cluster".into()))?;
    let d = dim.unwrap_or(first.len());
    for f in cluster {
        crate::error::check_dim(d, f.len())?;
        if f.iter().any(|x| !x.is_finite()) {
            return Err(OwlError::InvalidInput("non-finite feature in cluster".into()));
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Oncm,
    Onno,
    Ogmm,
    Ocbcl,
    Oscail,
    Mevm,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 6] = [
        LearnerKind::Oncm,
        LearnerKind::Onno,
        LearnerKind::Ogmm,
        LearnerKind::Ocbcl,
        LearnerKind::Oscail,
        LearnerKind::Mevm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Oncm => "ONCM",
            LearnerKind::Onno => "ONNO",
            LearnerKind::Ogmm => "OGMM",
            LearnerKind::Ocbcl => "OCBCL",
            LearnerKind::Oscail => "OSCAIL",
            LearnerKind::Mevm => "MEVM",
        }
    }
}

/// Per-learner hyperparameters; only the entry matching the chosen kind is read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct LearnerParams {
    pub nno: NnoConfig,
    pub gmm: GmmConfig,
    pub cbcl: CbclConfig,
    pub scail: ScailConfig,
    pub evm: crate::evm::EvmConfig,
}

/// The discovered-class learner of the linear-classifier agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiscoveredLearner<T> {
    Ncm(NcmState<T>),
    Nno(NnoState<T>),
    Gmm(GmmState<T>),
    Cbcl(CbclState<T>),
    Scail(ScailState<T>),
    Mevm(LcEvmLearner<T>),
}

impl<T: Scalar> DiscoveredLearner<T> {
    pub fn new(kind: LearnerKind, dim: usize, params: &LearnerParams, seed: u64) -> Result<Self> {
        Ok(match kind {
            LearnerKind::Oncm => Self::Ncm(NcmState::new(dim)),
            LearnerKind::Onno => Self::Nno(NnoState::new(dim, params.nno.clone(), seed)?),
            LearnerKind::Ogmm => Self::Gmm(GmmState::new(dim, params.gmm.clone())?),
            LearnerKind::Ocbcl => Self::Cbcl(CbclState::new(dim, params.cbcl.clone())?),
            LearnerKind::Oscail => Self::Scail(ScailState::new(dim, params.scail.clone())),
            LearnerKind::Mevm => Self::Mevm(LcEvmLearner::new(dim, params.evm.clone())?),
        })
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Self::Ncm(_) => LearnerKind::Oncm,
            Self::Nno(_) => LearnerKind::Onno,
            Self::Gmm(_) => LearnerKind::Ogmm,
            Self::Cbcl(_) => LearnerKind::Ocbcl,
            Self::Scail(_) => LearnerKind::Oscail,
            Self::Mevm(_) => LearnerKind::Mevm,
        }
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        match self {
            Self::Ncm(s) => s.class_ids(),
            Self::Nno(s) => s.class_ids(),
            Self::Gmm(s) => s.class_ids(),
            Self::Cbcl(s) => s.class_ids(),
            Self::Scail(s) => s.class_ids().to_vec(),
            Self::Mevm(s) => s.class_ids(),
        }
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        match self {
            Self::Ncm(s) => s.predict(f),
            Self::Nno(s) => s.predict(f),
            Self::Gmm(s) => s.predict(f),
            Self::Cbcl(s) => s.predict(f),
            Self::Scail(s) => s.predict(f),
            Self::Mevm(s) => s.predict(f),
        }
    }

    /// Learns every cluster admitted in one management step.
    pub fn learn(&mut self, clusters: &[(ClassId, Vec<Vec<T>>)]) -> Result<()> {
        if clusters.is_empty() {
            return Ok(());
        }
        match self {
            Self::Ncm(s) => clusters.iter().try_for_each(|(id, c)| s.update(c, *id)),
            Self::Nno(s) => s.update(clusters),
            Self::Gmm(s) => clusters.iter().try_for_each(|(id, c)| s.update(c, *id)),
            Self::Cbcl(s) => clusters.iter().try_for_each(|(id, c)| s.update(c, *id)),
            Self::Scail(s) => s.fit_step(clusters),
            Self::Mevm(s) => s.learn(clusters),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn augment_examples() {
        let p = augment_probabilities(&[1.0f64, 0.0, 0.0]).unwrap();
        assert_eq!(p.to_vec(), vec![0.0, 1.0, 0.0, 0.0]);

        let third = 1.0f64 / 3.0;
        let p = augment_probabilities(&[third; 3]).unwrap();
        for (got, want) in p.to_vec().iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }

        let p = augment_probabilities(&[0.5f64, 0.5]).unwrap();
        for got in p.to_vec() {
            assert_abs_diff_eq!(got, third, epsilon = 1e-12);
        }
        assert!(augment_probabilities::<f64>(&[]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn augment_is_on_simplex_and_keeps_argmax(q in proptest::collection::vec(0.0f64..=1.0, 1..12)) {
            let p = augment_probabilities(&q).unwrap();
            proptest::prop_assert!((p.total() - 1.0).abs() < 1e-9);
            proptest::prop_assert!(p.to_vec().iter().all(|&x| x >= 0.0));
            proptest::prop_assert_eq!(p.argmax_class(), argmax(&q));
        }
    }
}
