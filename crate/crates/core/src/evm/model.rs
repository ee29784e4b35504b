use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weibull::{fit_weibull, WeibullParams, DEFAULT_KAPPA_MAX};
use crate::error::{check_dim, OwlError, Result};
use crate::learners::{augment_probabilities, AugmentedProbs};
use crate::scalar::{dist, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvmConfig {
    pub tail_size: usize,
    /// Margin multiplier for classes fitted at pretraining.
    pub distance_multiplier: f64,
    /// Margin multiplier for classes added during the stream.
    pub incremental_distance_multiplier: f64,
    /// Inclusion probability at which one extreme vector covers another anchor.
    pub cover_threshold: f64,
    pub kappa_max: f64,
    /// Features kept per class in the negative bank; `None` keeps all.
    pub bank_cap: Option<usize>,
}

impl Default for EvmConfig {
    fn default() -> Self {
        Self {
            tail_size: 100,
            distance_multiplier: 0.45,
            incremental_distance_multiplier: 0.55,
            cover_threshold: 0.5,
            kappa_max: DEFAULT_KAPPA_MAX,
            bank_cap: Some(50),
        }
    }
}

impl EvmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tail_size == 0 {
            return Err(OwlError::InvalidConfig("tail_size must be at least 1".into()));
        }
        if !(self.distance_multiplier > 0.0 && self.incremental_distance_multiplier > 0.0) {
            return Err(OwlError::InvalidConfig("distance multipliers must be positive".into()));
        }
        if !(self.cover_threshold > 0.0 && self.cover_threshold <= 1.0) {
            return Err(OwlError::InvalidConfig("cover_threshold must lie in (0, 1]".into()));
        }
        if !(self.kappa_max > 0.0) {
            return Err(OwlError::InvalidConfig("kappa_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremeVector<T> {
    pub anchor: Vec<T>,
    pub weibull: WeibullParams<T>,
    pub class_id: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvmClass<T> {
    pub id: ClassId,
    pub evs: Vec<ExtremeVector<T>>,
}

/// The `tail` smallest values of `d_m · ‖anchor − x‖` over the negatives, ascending.
pub fn compute_margins<T: Scalar, N: AsRef<[T]>>(anchor: &[T], negatives: &[N], dm: f64, tail: usize) -> Result<Vec<T>> {
    if negatives.is_empty() {
        return Err(OwlError::InsufficientData("margins need at least one negative".into()));
    }
    let dm = T::of(dm);
    let mut m: Vec<T> = negatives.iter().map(|x| dm * dist(anchor, x.as_ref())).collect();
    m.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    m.truncate(tail.max(1));
    Ok(m)
}

pub fn psi_inclusion<T: Scalar>(ev: &ExtremeVector<T>, f: &[T]) -> T {
    ev.weibull.inclusion(dist(f, &ev.anchor))
}

/// Greedy set cover: `coverage[i][j]` says candidate i covers element j.
/// Repeatedly keeps the candidate covering the most uncovered elements
/// (lowest index on ties) until nothing more can be covered. Returns kept
/// indices in ascending order.
pub fn greedy_cover(coverage: &[Vec<bool>]) -> Vec<usize> {
    let n = coverage.first().map_or(0, |r| r.len());
    let mut covered = vec![false; n];
    let mut kept = Vec::new();
    loop {
        let best = coverage
            .iter()
            .enumerate()
            .map(|(i, row)| (i, row.iter().zip(&covered).filter(|(&c, &done)| c && !done).count()))
            .fold(None, |best: Option<(usize, usize)>, (i, gain)| match best {
                Some((_, g)) if g >= gain => best,
                _ => Some((i, gain)),
            });
        match best {
            Some((i, gain)) if gain > 0 => {
                for (done, &c) in covered.iter_mut().zip(&coverage[i]) {
                    *done |= c;
                }
                kept.push(i);
            }
            _ => break,
        }
    }
    kept.sort_unstable();
    kept
}

/// Keeps a subset of extreme vectors whose inclusion ≥ threshold covers every anchor.
pub fn reduce_model<T: Scalar>(evs: Vec<ExtremeVector<T>>, threshold: f64) -> Vec<ExtremeVector<T>> {
    if evs.len() <= 1 {
        return evs;
    }
    let t = T::of(threshold);
    let coverage: Vec<Vec<bool>> = evs
        .par_iter()
        .map(|ev| evs.iter().map(|other| psi_inclusion(ev, &other.anchor) >= t).collect())
        .collect();
    let kept = greedy_cover(&coverage);
    let mut evs: Vec<Option<ExtremeVector<T>>> = evs.into_iter().map(Some).collect();
    kept.into_iter().filter_map(|i| evs[i].take()).collect()
}

fn fit_class<T: Scalar>(
    id: ClassId,
    points: &[Vec<T>],
    negatives: &[&[T]],
    dm: f64,
    config: &EvmConfig,
) -> Result<EvmClass<T>> {
    let evs = points
        .par_iter()
        .map(|p| {
            let margins = compute_margins(p, negatives, dm, config.tail_size)?;
            Ok(ExtremeVector {
                anchor: p.clone(),
                weibull: fit_weibull(&margins, config.kappa_max)?,
                class_id: id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvmClass {
        id,
        evs: reduce_model(evs, config.cover_threshold),
    })
}

/// Labeled features used as negatives when new classes are fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBank<T> {
    pub cap: Option<usize>,
    pub classes: BTreeMap<ClassId, Vec<Vec<T>>>,
}

impl<T: Scalar> FeatureBank<T> {
    pub fn new(cap: Option<usize>) -> Self {
        Self { cap, classes: BTreeMap::new() }
    }

    /// Stores up to `cap` features of the class (the first ones given).
    pub fn add(&mut self, id: ClassId, features: &[Vec<T>]) {
        let entry = self.classes.entry(id).or_default();
        let room = self.cap.map_or(usize::MAX, |c| c.saturating_sub(entry.len()));
        entry.extend(features.iter().take(room).cloned());
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> impl Iterator<Item = &[T]> {
        self.classes.values().flatten().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvmModel<T> {
    pub dim: usize,
    pub config: EvmConfig,
    pub classes: Vec<EvmClass<T>>,
}

impl<T: Scalar> EvmModel<T> {
    pub fn empty(dim: usize, config: EvmConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { dim, config, classes: Vec::new() })
    }

    /// Fits every class against all other classes' points, then reduces.
    pub fn train(dim: usize, groups: &[(ClassId, &[Vec<T>])], config: EvmConfig) -> Result<Self> {
        config.validate()?;
        if groups.len() < 2 {
            return Err(OwlError::InsufficientData("evm training needs at least two classes".into()));
        }
        let mut seen = Vec::new();
        for (id, pts) in groups {
            crate::learners::check_cluster(Some(dim), pts)?;
            crate::learners::check_new_class(&seen, *id)?;
            seen.push(*id);
        }
        let classes = groups
            .iter()
            .enumerate()
            .map(|(gi, (id, pts))| {
                let negatives: Vec<&[T]> = groups
                    .iter()
                    .enumerate()
                    .filter(|(gj, _)| *gj != gi)
                    .flat_map(|(_, (_, other))| other.iter().map(Vec::as_slice))
                    .collect();
                fit_class(*id, pts, &negatives, config.distance_multiplier, &config)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, config, classes })
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn extreme_vector_count(&self) -> usize {
        self.classes.iter().map(|c| c.evs.len()).sum()
    }

    /// Per class, the largest inclusion probability over its extreme vectors.
    pub fn class_probabilities(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        Ok(self
            .classes
            .iter()
            .map(|c| c.evs.iter().map(|ev| psi_inclusion(ev, f)).fold(T::zero(), T::max))
            .collect())
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        if self.classes.is_empty() {
            return Err(OwlError::InsufficientData("evm model has no classes".into()));
        }
        augment_probabilities(&self.class_probabilities(f)?)
    }

    /// Adds each cluster as a class fitted against the bank plus the other
    /// clusters of the same step, using the incremental multiplier and a tail
    /// of at most `tail_size`. Existing classes are left untouched; the
    /// clusters are then added to the bank.
    pub fn increment(&mut self, bank: &mut FeatureBank<T>, clusters: &[(ClassId, Vec<Vec<T>>)]) -> Result<()> {
        if clusters.is_empty() {
            return Ok(());
        }
        let mut ids = self.class_ids();
        for (id, c) in clusters {
            crate::learners::check_cluster(Some(self.dim), c)?;
            crate::learners::check_new_class(&ids, *id)?;
            ids.push(*id);
        }
        let mut fitted = Vec::with_capacity(clusters.len());
        for (ci, (id, cluster)) in clusters.iter().enumerate() {
            let negatives: Vec<&[T]> = bank
                .features()
                .chain(
                    clusters
                        .iter()
                        .enumerate()
                        .filter(|(cj, _)| *cj != ci)
                        .flat_map(|(_, (_, other))| other.iter().map(Vec::as_slice)),
                )
                .collect();
            if negatives.is_empty() {
                return Err(OwlError::InsufficientData(format!("no negatives available for class {id}")));
            }
            fitted.push(fit_class(*id, cluster, &negatives, self.config.incremental_distance_multiplier, &self.config)?);
        }
        self.classes.extend(fitted);
        for (id, cluster) in clusters {
            bank.add(*id, cluster);
        }
        Ok(())
    }
}

/// Extreme value machine used only for discovered classes next to a linear
/// known-class head. Its bank starts empty, so a lone first cluster waits
/// until another cluster supplies negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcEvmLearner<T> {
    pub model: EvmModel<T>,
    pub bank: FeatureBank<T>,
    pub pending: Vec<(ClassId, Vec<Vec<T>>)>,
}

impl<T: Scalar> LcEvmLearner<T> {
    pub fn new(dim: usize, config: EvmConfig) -> Result<Self> {
        let bank = FeatureBank::new(config.bank_cap);
        Ok(Self { model: EvmModel::empty(dim, config)?, bank, pending: Vec::new() })
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.model.class_ids()
    }

    pub fn learn(&mut self, clusters: &[(ClassId, Vec<Vec<T>>)]) -> Result<()> {
        let mut batch = std::mem::take(&mut self.pending);
        batch.extend(clusters.iter().cloned());
        if self.bank.is_empty() && batch.len() < 2 {
            self.pending = batch;
            return Ok(());
        }
        self.model.increment(&mut self.bank, &batch)
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.model.dim, f.len())?;
        if self.model.classes.is_empty() {
            return Ok(AugmentedProbs::all_unknown(0));
        }
        self.model.predict(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(anchor: Vec<f64>, shape: f64, scale: f64) -> ExtremeVector<f64> {
        ExtremeVector { anchor, weibull: WeibullParams { shape, scale }, class_id: 0 }
    }

    #[test]
    fn margin_examples() {
        let neg = vec![vec![2.0f64, 0.0], vec![0.0, 4.0], vec![6.0, 0.0]];
        assert_eq!(compute_margins(&[0.0, 0.0], &neg, 0.5, 2).unwrap(), vec![1.0, 2.0]);
        let m = compute_margins(&[0.0, 0.0], &neg, 0.45, 2).unwrap();
        assert_abs_diff_eq!(m[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(m[1], 1.8, epsilon = 1e-12);
        assert_eq!(compute_margins(&[2.0, 0.0], &neg, 0.5, 5).unwrap()[0], 0.0);
        assert_eq!(compute_margins(&[0.0, 0.0], &neg, 0.5, 10).unwrap().len(), 3);
        assert!(compute_margins::<f64, Vec<f64>>(&[0.0], &[], 0.5, 2).is_err());
    }

    #[test]
    fn predict_examples() {
        let model = EvmModel {
            dim: 1,
            config: EvmConfig::default(),
            classes: vec![EvmClass { id: 0, evs: vec![ev(vec![0.0], 2.0, 1.0)] }],
        };
        let p = model.predict(&[0.0]).unwrap();
        assert_eq!(p.to_vec(), vec![0.0, 1.0]);

        let p = augment_probabilities(&[0.1f64, 0.2]).unwrap();
        assert_abs_diff_eq!(p.p_unknown, 0.7273, epsilon = 1e-4);
        assert_abs_diff_eq!(p.p_classes[0], 0.0909, epsilon = 1e-4);
        assert_abs_diff_eq!(p.p_classes[1], 0.1818, epsilon = 1e-4);

        // two extreme vectors with inclusion 0.2 and 0.7 at f
        let a = ev(vec![1.0], 1.0, 1.0 / -(0.2f64.ln()));
        let b = ev(vec![-1.0], 1.0, 1.0 / -(0.7f64.ln()));
        let model = EvmModel { dim: 1, config: EvmConfig::default(), classes: vec![EvmClass { id: 3, evs: vec![a, b] }] };
        assert_abs_diff_eq!(model.class_probabilities(&[0.0]).unwrap()[0], 0.7, epsilon = 1e-12);
        assert!(EvmModel::<f64>::empty(1, EvmConfig::default()).unwrap().predict(&[0.0]).is_err());
    }

    #[test]
    fn two_point_classes() {
        let a = vec![vec![0.0f64, 0.0]];
        let b = vec![vec![2.0f64, 0.0]];
        let cfg = EvmConfig { distance_multiplier: 0.5, ..Default::default() };
        let m = EvmModel::train(2, &[(0, &a), (1, &b)], cfg).unwrap();
        for c in &m.classes {
            assert_eq!(c.evs.len(), 1);
            assert_eq!(c.evs[0].weibull.scale, 1.0);
            assert_eq!(c.evs[0].weibull.shape, DEFAULT_KAPPA_MAX);
        }
        let q = m.class_probabilities(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(q[0], (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], (-1f64).exp(), epsilon = 1e-12);
        assert!(EvmModel::train(2, &[(0, &a)], EvmConfig::default()).is_err());
    }

    fn blob(center: &[f64], n: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|&c| {
                        let (u1, u2): (f64, f64) = (rng.random_range(1e-12..1.0), rng.random());
                        c + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn separated_blobs_train_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let groups: Vec<Vec<Vec<f64>>> = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.5, 0.0]]
            .iter()
            .map(|c| blob(c, 30, 0.05, &mut rng))
            .collect();
        let refs: Vec<(ClassId, &[Vec<f64>])> = groups.iter().enumerate().map(|(i, g)| (i, g.as_slice())).collect();
        let m = EvmModel::train(3, &refs, EvmConfig::default()).unwrap();
        for (i, g) in groups.iter().enumerate() {
            for f in g {
                let q = m.class_probabilities(f).unwrap();
                assert_eq!(crate::scalar::argmax(&q), Some(i));
            }
        }
        // reduction keeps every anchor covered
        for (i, c) in m.classes.iter().enumerate() {
            assert!(c.evs.len() <= 30);
            for f in &groups[i] {
                let best = c.evs.iter().map(|ev| psi_inclusion(ev, f)).fold(0.0, f64::max);
                assert!(best >= 0.5 || c.evs.iter().any(|ev| ev.anchor == *f));
            }
        }
    }

    #[test]
    fn duplicated_points_are_degenerate_not_errors() {
        let a = vec![vec![1.0f64, 1.0]; 4];
        let b = vec![vec![3.0f64, 1.0]; 4];
        let m = EvmModel::train(2, &[(0, &a), (1, &b)], EvmConfig::default()).unwrap();
        assert_eq!(m.classes[0].evs.len(), 1);
        assert_eq!(m.classes[0].evs[0].weibull.shape, DEFAULT_KAPPA_MAX);
    }

    #[test]
    fn reduce_examples() {
        let same = vec![ev(vec![0.0], 2.0, 1.0), ev(vec![0.0], 2.0, 1.0), ev(vec![0.0], 2.0, 1.0)];
        assert_eq!(reduce_model(same, 0.5).len(), 1);
        let far = vec![ev(vec![0.0], 2.0, 1.0), ev(vec![10.0], 2.0, 1.0), ev(vec![20.0], 2.0, 1.0)];
        assert_eq!(reduce_model(far, 0.5).len(), 3);
    }

    #[test]
    fn chain_cover_picks_middle_first() {
        // a–b–c–d, each covering itself and its neighbours
        let cov = vec![
            vec![true, true, false, false],
            vec![true, true, true, false],
            vec![false, true, true, true],
            vec![false, false, true, true],
        ];
        assert_eq!(greedy_cover(&cov), vec![1, 2]);
    }

    fn min_cover_size(cov: &[Vec<bool>]) -> usize {
        let n = cov.len();
        (0u32..1 << n)
            .filter(|mask| (0..n).all(|j| (0..n).any(|i| mask & (1 << i) != 0 && cov[i][j])))
            .map(|mask| mask.count_ones() as usize)
            .min()
            .unwrap()
    }

    proptest::proptest! {
        #[test]
        fn greedy_cover_is_a_cover_near_minimal(n in 1usize..10, bits in proptest::collection::vec(proptest::bool::weighted(0.3), 100)) {
            let cov: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i == j || bits[i * 10 + j]).collect()).collect();
            let kept = greedy_cover(&cov);
            for j in 0..n {
                proptest::prop_assert!(kept.iter().any(|&i| cov[i][j]));
            }
            let opt = min_cover_size(&cov);
            let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
            proptest::prop_assert!(kept.len() >= opt);
            proptest::prop_assert!(kept.len() as f64 <= opt as f64 * harmonic + 1e-9);
        }
    }

    #[test]
    fn increment_bookkeeping() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = blob(&[0.0, 0.0], 10, 0.1, &mut rng);
        let b = blob(&[3.0, 0.0], 10, 0.1, &mut rng);
        let mut m = EvmModel::train(2, &[(0, &a), (1, &b)], EvmConfig::default()).unwrap();
        let before = m.classes.clone();
        let mut bank = FeatureBank::new(Some(50));
        bank.add(0, &a);
        bank.add(1, &b);

        m.increment(&mut bank, &[]).unwrap();
        assert_eq!(m.classes, before);
        assert_eq!(bank.len(), 20);

        let c = blob(&[0.0, 3.0], 7, 0.1, &mut rng);
        m.increment(&mut bank, &[(2, c.clone())]).unwrap();
        assert_eq!(m.classes.len(), 3);
        assert_eq!(bank.len(), 27);
        assert_eq!(&m.classes[..2], &before[..]);
        assert!(m.increment(&mut bank, &[(2, c)]).is_err());
    }

    #[test]
    fn sibling_clusters_shrink_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = blob(&[0.0, 0.0], 10, 0.1, &mut rng);
        let c1 = blob(&[5.0, 0.0], 8, 0.2, &mut rng);
        let c2 = blob(&[6.0, 0.0], 8, 0.2, &mut rng);
        let cfg = EvmConfig { cover_threshold: 1.0, ..Default::default() };
        let base = EvmModel { dim: 2, config: cfg, classes: Vec::new() };

        let mut alone = base.clone();
        let mut bank = FeatureBank::new(None);
        bank.add(0, &a);
        alone.increment(&mut bank, &[(1, c1.clone())]).unwrap();

        let mut paired = base;
        let mut bank = FeatureBank::new(None);
        bank.add(0, &a);
        paired.increment(&mut bank, &[(1, c1.clone()), (2, c2)]).unwrap();

        let mut matched = 0;
        for x in &paired.classes[0].evs {
            if let Some(y) = alone.classes[0].evs.iter().find(|y| y.anchor == x.anchor) {
                assert!(x.weibull.scale <= y.weibull.scale);
                matched += 1;
            }
        }
        assert!(matched > 0);
    }

    #[test]
    fn bank_respects_cap() {
        let mut bank = FeatureBank::<f64>::new(Some(3));
        bank.add(0, &vec![vec![1.0]; 5]);
        bank.add(0, &vec![vec![2.0]; 5]);
        assert_eq!(bank.len(), 3);
        assert!(bank.features().all(|f| f == [1.0]));
    }

    #[test]
    fn lc_learner_waits_for_negatives() {
        let mut l = LcEvmLearner::<f64>::new(1, EvmConfig::default()).unwrap();
        l.learn(&[(10, vec![vec![0.0], vec![0.1]])]).unwrap();
        assert!(l.class_ids().is_empty());
        assert_eq!(l.predict(&[0.0]).unwrap().p_unknown, 1.0);
        l.learn(&[(11, vec![vec![5.0], vec![5.1]])]).unwrap();
        assert_eq!(l.class_ids(), vec![10, 11]);
        assert_eq!(l.bank.len(), 4);
    }
}
