//! First-neighbor (FINCH) clustering and partition selection.

use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::scalar::{dot, mean_vector, norm, sq_dist, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
}

/// Which FINCH level a manager clusters with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum PartitionMode {
    /// Always the finest partition.
    #[serde(alias = "fp", alias = "FP")]
    Fp,
    /// The second partition when at least three exist, else the first.
    #[default]
    #[serde(alias = "sp", alias = "SP")]
    Sp,
}

impl PartitionMode {
    pub fn short_name(&self) -> &'static str {
        match self {
            PartitionMode::Fp => "FP",
            PartitionMode::Sp => "SP",
        }
    }
}

/// Label assignments from finest to coarsest. Labels are dense and numbered
/// by first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSet {
    pub partitions: Vec<Vec<usize>>,
}

impl PartitionSet {
    pub fn cluster_count(&self, level: usize) -> usize {
        self.partitions[level].iter().copied().max().map_or(0, |m| m + 1)
    }
}

fn distance<T: Scalar>(metric: DistanceMetric, a: &[T], b: &[T]) -> T {
    match metric {
        DistanceMetric::Euclidean => sq_dist(a, b),
        DistanceMetric::Cosine => {
            let floor = T::of(1e-12);
            T::one() - dot(a, b) / (norm(a).max(floor) * norm(b).max(floor))
        }
    }
}

/// Index of each point's nearest other point; ties go to the lowest index.
pub fn first_neighbors<T: Scalar>(points: &[Vec<T>], metric: DistanceMetric) -> Vec<usize> {
    use rayon::prelude::*;
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = usize::MAX;
            let mut best_d = T::infinity();
            for (j, p) in points.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = distance(metric, &points[i], p);
                if best == usize::MAX || d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of the graph linking each point to its first
/// neighbor, labeled by first appearance. Points sharing a first neighbor end
/// up together through that neighbor.
pub fn first_neighbor_components(neighbors: &[usize]) -> Vec<usize> {
    let n = neighbors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, &j) in neighbors.iter().enumerate() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_label[r] == usize::MAX {
            root_label[r] = next;
            next += 1;
        }
        labels[i] = root_label[r];
    }
    labels
}

/// Every FINCH level: level 0 over the points, later levels over the means
/// of the previous level's clusters, until a single cluster remains.
pub fn finch_partitions<T: Scalar>(points: &[Vec<T>], metric: DistanceMetric) -> Result<PartitionSet> {
    if points.len() < 2 {
        return Err(OwlError::InsufficientData("clustering needs at least two points".into()));
    }
    let dim = points[0].len();
    for p in points {
        crate::error::check_dim(dim, p.len())?;
    }
    let mut partitions: Vec<Vec<usize>> = Vec::new();
    let mut level_points: Vec<Vec<T>> = points.to_vec();
    // point -> cluster at the current level
    let mut assignment: Vec<usize> = (0..points.len()).collect();
    loop {
        let labels = first_neighbor_components(&first_neighbors(&level_points, metric));
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        assignment = assignment.iter().map(|&c| labels[c]).collect();
        partitions.push(assignment.clone());
        if k <= 1 {
            break;
        }
        let mut members: Vec<Vec<&Vec<T>>> = vec![Vec::new(); k];
        for (p, &c) in points.iter().zip(&assignment) {
            members[c].push(p);
        }
        level_points = members.iter().map(|m| mean_vector(m)).collect();
    }
    Ok(PartitionSet { partitions })
}

/// The partition a manager clusters with under `mode`.
pub fn select_partition(set: &PartitionSet, mode: PartitionMode) -> Result<&[usize]> {
    let chosen = match (mode, set.partitions.len()) {
        (_, 0) => return Err(OwlError::InvalidInput("empty partition set".into())),
        (PartitionMode::Fp, _) | (PartitionMode::Sp, 1 | 2) => 0,
        (PartitionMode::Sp, _) => 1,
    };
    Ok(&set.partitions[chosen])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn four_points_two_levels() {
        let set = finch_partitions(&pts(&[0.0, 1.0, 10.0, 11.0]), DistanceMetric::Euclidean).unwrap();
        assert_eq!(set.partitions, vec![vec![0, 0, 1, 1], vec![0, 0, 0, 0]]);
    }

    #[test]
    fn shared_neighbor_links_ends() {
        let set = finch_partitions(&pts(&[0.0, 1.0, 2.0]), DistanceMetric::Euclidean).unwrap();
        assert_eq!(set.partitions, vec![vec![0, 0, 0]]);
    }

    #[test]
    fn identical_points_single_partition() {
        let set = finch_partitions(&pts(&[3.0; 6]), DistanceMetric::Euclidean).unwrap();
        assert_eq!(set.partitions.len(), 1);
        assert_eq!(set.cluster_count(0), 1);
        assert!(finch_partitions(&pts(&[1.0]), DistanceMetric::Euclidean).is_err());
    }

    #[test]
    fn cosine_groups_by_direction() {
        let p = vec![vec![1.0, 0.0], vec![5.0, 0.1], vec![0.0, 1.0], vec![0.1, 7.0]];
        let set = finch_partitions(&p, DistanceMetric::Cosine).unwrap();
        assert_eq!(set.partitions[0], vec![0, 0, 1, 1]);
    }

    #[test]
    fn selection_rules() {
        let one = PartitionSet { partitions: vec![vec![0, 1]] };
        let two = PartitionSet { partitions: vec![vec![0, 1, 2], vec![0, 0, 1]] };
        let three = PartitionSet { partitions: vec![vec![0, 1, 2, 3], vec![0, 0, 1, 1], vec![0, 0, 0, 0]] };
        assert_eq!(select_partition(&one, PartitionMode::Sp).unwrap(), &[0, 1]);
        assert_eq!(select_partition(&two, PartitionMode::Sp).unwrap(), &[0, 1, 2]);
        assert_eq!(select_partition(&three, PartitionMode::Sp).unwrap(), &[0, 0, 1, 1]);
        assert_eq!(select_partition(&three, PartitionMode::Fp).unwrap(), &[0, 1, 2, 3]);
        assert!(select_partition(&PartitionSet { partitions: vec![] }, PartitionMode::Fp).is_err());
    }

    proptest::proptest! {
        #[test]
        fn levels_coarsen_and_shrink(xs in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 2..60)) {
            let set = finch_partitions(&xs, DistanceMetric::Euclidean).unwrap();
            for w in set.partitions.windows(2) {
                let (fine, coarse) = (&w[0], &w[1]);
                let kf = fine.iter().max().unwrap() + 1;
                let kc = coarse.iter().max().unwrap() + 1;
                proptest::prop_assert!(kc < kf);
                let mut map = vec![usize::MAX; kf];
                for (&f, &c) in fine.iter().zip(coarse) {
                    proptest::prop_assert!(map[f] == usize::MAX || map[f] == c);
                    map[f] = c;
                }
            }
            proptest::prop_assert_eq!(*set.partitions.last().unwrap().iter().max().unwrap(), 0);
        }

        #[test]
        fn relabeling_is_permutation_equivariant(
            xs in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..40),
            seed in 0u64..1000,
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..xs.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
            let a = finch_partitions(&xs, DistanceMetric::Euclidean).unwrap();
            let b = finch_partitions(&shuffled, DistanceMetric::Euclidean).unwrap();
            // compare co-membership at level 0 (ties can differ under reordering only with exact equal distances)
            for i in 0..xs.len() {
                for j in 0..xs.len() {
                    let same_a = a.partitions[0][perm[i]] == a.partitions[0][perm[j]];
                    let same_b = b.partitions[0][i] == b.partitions[0][j];
                    proptest::prop_assert_eq!(same_a, same_b);
                }
            }
        }
    }
}
