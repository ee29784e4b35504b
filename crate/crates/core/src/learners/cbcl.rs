use serde::{Deserialize, Serialize};

use super::{augment_probabilities, check_cluster, check_new_class, AugmentedProbs, MIN_CLASSES};
use crate::error::{check_dim, OwlError, Result};
use crate::scalar::{dist, softmax, Scalar};
use crate::types::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbclConfig {
    /// A point farther than this from every center of its class spawns a new center.
    pub distance_threshold: f64,
    /// Nearest centers consulted at prediction time.
    pub k: usize,
}

impl Default for CbclConfig {
    fn default() -> Self {
        Self {
            distance_threshold: 10.0,
            k: 5,
        }
    }
}

const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid<T> {
    pub center: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbclClass<T> {
    pub id: ClassId,
    pub centroids: Vec<Centroid<T>>,
}

impl<T> CbclClass<T> {
    pub fn member_count(&self) -> usize {
        self.centroids.iter().map(|c| c.count).sum()
    }
}

/// Open-world centroid-based concept learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbclState<T> {
    pub dim: usize,
    pub config: CbclConfig,
    pub classes: Vec<CbclClass<T>>,
}

impl<T: Scalar> CbclState<T> {
    pub fn new(dim: usize, config: CbclConfig) -> Result<Self> {
        if !(config.distance_threshold > 0.0) || config.k == 0 {
            return Err(OwlError::InvalidConfig("cbcl needs distance_threshold > 0 and k ≥ 1".into()));
        }
        Ok(Self { dim, config, classes: Vec::new() })
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    /// Points are folded in order: each joins its nearest center (count-weighted
    /// running mean) when within the threshold, otherwise starts a new center.
    pub fn update(&mut self, cluster: &[Vec<T>], id: ClassId) -> Result<()> {
        check_cluster(Some(self.dim), cluster)?;
        check_new_class(&self.class_ids(), id)?;
        let threshold = T::of(self.config.distance_threshold);
        let mut centroids: Vec<Centroid<T>> = Vec::new();
        for f in cluster {
            let nearest = centroids
                .iter()
                .enumerate()
                .map(|(i, c)| (i, dist(f, &c.center)))
                .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                });
            match nearest {
                Some((i, d)) if d <= threshold => {
                    let c = &mut centroids[i];
                    let n = T::of_usize(c.count);
                    for (m, &x) in c.center.iter_mut().zip(f) {
                        *m = (n * *m + x) / (n + T::one());
                    }
                    c.count += 1;
                }
                _ => centroids.push(Centroid { center: f.clone(), count: 1 }),
            }
        }
        self.classes.push(CbclClass { id, centroids });
        Ok(())
    }

    /// Class scores: sum of `1 / (n_i · d)` over the class's centers among the
    /// k nearest, `−∞` for classes with none there. `n_i` is the class's
    /// total member count.
    pub fn scores(&self, f: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim, f.len())?;
        let mut all: Vec<(T, usize, usize)> = Vec::new();
        for (ci, class) in self.classes.iter().enumerate() {
            for (j, c) in class.centroids.iter().enumerate() {
                all.push((dist(f, &c.center), ci, j));
            }
        }
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut r = vec![T::neg_infinity(); self.classes.len()];
        let floor = T::of(MIN_DISTANCE);
        for &(d, ci, _) in all.iter().take(self.config.k) {
            let n = T::of_usize(self.classes[ci].member_count());
            let term = T::one() / (n * d.max(floor));
            r[ci] = if r[ci] == T::neg_infinity() { term } else { r[ci] + term };
        }
        Ok(r)
    }

    pub fn predict(&self, f: &[T]) -> Result<AugmentedProbs<T>> {
        check_dim(self.dim, f.len())?;
        if self.classes.len() < MIN_CLASSES {
            return Ok(AugmentedProbs::all_unknown(self.classes.len()));
        }
        augment_probabilities(&softmax(&self.scores(f)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn agglomeration_trace() {
        let mut s = CbclState::<f64>::new(1, CbclConfig::default()).unwrap();
        s.update(&pts(&[0.0, 3.0, 20.0]), 0).unwrap();
        let c = &s.classes[0].centroids;
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].center[0], c[0].count), (1.5, 2));
        assert_eq!((c[1].center[0], c[1].count), (20.0, 1));
    }

    #[test]
    fn close_points_form_one_center() {
        let mut s = CbclState::<f64>::new(1, CbclConfig::default()).unwrap();
        s.update(&pts(&[1.0, 2.0, 3.0, 6.0]), 0).unwrap();
        let c = &s.classes[0].centroids;
        assert_eq!(c.len(), 1);
        assert_abs_diff_eq!(c[0].center[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_threshold_gives_one_center_per_distinct_point() {
        let cfg = CbclConfig { distance_threshold: 1e-9, ..Default::default() };
        let mut s = CbclState::<f64>::new(1, cfg).unwrap();
        s.update(&pts(&[0.0, 1.0, 1.0, 2.0]), 0).unwrap();
        assert_eq!(s.classes[0].centroids.len(), 3);
        assert_eq!(s.classes[0].member_count(), 4);
    }

    #[test]
    fn score_example_with_far_third_class() {
        let cfg = CbclConfig { k: 2, ..Default::default() };
        let mut s = CbclState::<f64>::new(2, cfg).unwrap();
        s.update(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0).unwrap();
        s.update(&[vec![3.0, 0.0]], 1).unwrap();
        s.update(&[vec![100.0, 100.0]], 2).unwrap();
        let r = s.scores(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(r[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r[1], 0.5, epsilon = 1e-12);
        assert_eq!(r[2], f64::NEG_INFINITY);
        let p = s.predict(&[1.0, 0.0]).unwrap();
        for x in p.to_vec().iter().take(3) {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_eq!(p.p_classes[2], 0.0);
    }

    #[test]
    fn exact_match_is_finite() {
        let mut s = CbclState::<f64>::new(1, CbclConfig::default()).unwrap();
        for (i, x) in [0.0, 5.0, 9.0].iter().enumerate() {
            s.update(&pts(&[*x]), i).unwrap();
        }
        let p = s.predict(&[5.0]).unwrap();
        assert!(p.to_vec().iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(p.p_classes[1], 1.0, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn member_count_equals_points(xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let mut s = CbclState::<f64>::new(1, CbclConfig::default()).unwrap();
            s.update(&pts(&xs), 0).unwrap();
            proptest::prop_assert_eq!(s.classes[0].member_count(), xs.len());
        }
    }
}
