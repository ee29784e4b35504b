//! Accuracy, B-cubed, NMI and the open-world metric (OWM).
//!
//! OWM pools four routing groups (known/unknown ground truth crossed with
//! known/unknown prediction) and credits only the correctly routed groups:
//! accuracy for knowns routed known, a clustering score for unknowns routed
//! unknown. Misrouted items only enlarge the denominator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::types::{GroundTruth, Prediction};

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a == 0 || b == 0 {
        return Err(OwlError::InvalidInput("empty label sequence".into()));
    }
    if a != b {
        return Err(OwlError::InvalidInput(format!(
            "label sequences differ in length ({a} vs {b})"
        )));
    }
    Ok(())
}

pub fn accuracy<T: Scalar>(predicted: &[i64], truth: &[i64]) -> Result<T> {
    check_pair(predicted.len(), truth.len())?;
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(T::of_usize(hits) / T::of_usize(truth.len()))
}

/// Unweighted mean of per-class F1 over the classes present in either sequence.
pub fn macro_f1<T: Scalar>(predicted: &[i64], truth: &[i64]) -> Result<T> {
    check_pair(predicted.len(), truth.len())?;
    let mut classes: BTreeMap<i64, (usize, usize, usize)> = BTreeMap::new(); // tp, fp, fn
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            classes.entry(t).or_default().0 += 1;
        } else {
            classes.entry(p).or_default().1 += 1;
            classes.entry(t).or_default().2 += 1;
        }
    }
    let mut total = T::zero();
    for &(tp, fp, fn_) in classes.values() {
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total = total + T::of_usize(2 * tp) / T::of_usize(denom);
        }
    }
    Ok(total / T::of_usize(classes.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B3Score<T> {
    pub precision: T,
    pub recall: T,
    pub f: T,
}

fn dense_ids(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

/// Contingency table `A = μ_Yᵀ μ_K` for hard labelings (rows: true labels,
/// columns: clusters).
pub fn contingency<T: Scalar>(clusters: &[i64], truth: &[i64]) -> Matrix<T> {
    let (ci, nc) = dense_ids(clusters);
    let (ti, nt) = dense_ids(truth);
    let mut a = Matrix::zeros(nt, nc);
    for (&c, &t) in ci.iter().zip(&ti) {
        a[(t, c)] = a[(t, c)] + T::one();
    }
    a
}

/// B-cubed from an `L × C` co-membership matrix `A`:
/// `M = A⊙A`, `T = Σ_L A`, `S = Σ_C A`, `P = Σ_L M ⊘ T²`, `R = Σ_C M ⊘ S²`,
/// precision `TᵀP / Tᵀ1`, recall `SᵀR / Sᵀ1`.
pub fn b3_from_comembership<T: Scalar>(a: &Matrix<T>) -> B3Score<T> {
    let (l, c) = (a.rows(), a.cols());
    let mut col_sum = vec![T::zero(); c];
    let mut col_sq = vec![T::zero(); c];
    let mut row_sum = vec![T::zero(); l];
    let mut row_sq = vec![T::zero(); l];
    for i in 0..l {
        for j in 0..c {
            let x = a[(i, j)];
            col_sum[j] = col_sum[j] + x;
            col_sq[j] = col_sq[j] + x * x;
            row_sum[i] = row_sum[i] + x;
            row_sq[i] = row_sq[i] + x * x;
        }
    }
    let weighted = |sums: &[T], sqs: &[T]| {
        let mut num = T::zero();
        let mut den = T::zero();
        for (&s, &m) in sums.iter().zip(sqs) {
            if s > T::zero() {
                num = num + s * (m / (s * s));
            }
            den = den + s;
        }
        if den > T::zero() {
            num / den
        } else {
            T::zero()
        }
    };
    let precision = weighted(&col_sum, &col_sq);
    let recall = weighted(&row_sum, &row_sq);
    let f = if precision + recall > T::zero() {
        T::of(2.0) * precision * recall / (precision + recall)
    } else {
        T::zero()
    };
    B3Score {
        precision,
        recall,
        f,
    }
}

/// B-cubed for hard labelings.
pub fn b3<T: Scalar>(clusters: &[i64], truth: &[i64]) -> Result<B3Score<T>> {
    check_pair(clusters.len(), truth.len())?;
    Ok(b3_from_comembership(&contingency(clusters, truth)))
}

/// B-cubed for fuzzy memberships: `truth` is `N × L`, `clusters` is `N × C`.
pub fn b3_fuzzy<T: Scalar>(truth: &Matrix<T>, clusters: &Matrix<T>) -> Result<B3Score<T>> {
    check_pair(truth.rows(), clusters.rows())?;
    Ok(b3_from_comembership(&truth.transpose().matmul(clusters)))
}

fn entropy<T: Scalar>(counts: impl Iterator<Item = T>, n: T) -> T {
    counts
        .filter(|&c| c > T::zero())
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization; 0/0 is 0.
pub fn nmi<T: Scalar>(clusters: &[i64], truth: &[i64]) -> Result<T> {
    check_pair(clusters.len(), truth.len())?;
    let a: Matrix<T> = contingency(clusters, truth);
    let n = T::of_usize(truth.len());
    let rows: Vec<T> = (0..a.rows()).map(|i| a.row(i).iter().copied().sum()).collect();
    let cols: Vec<T> = (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a[(i, j)]).sum())
        .collect();
    let h_truth = entropy(rows.iter().copied(), n);
    let h_clusters = entropy(cols.iter().copied(), n);
    let mut mi = T::zero();
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let nij = a[(i, j)];
            if nij > T::zero() {
                mi = mi + nij / n * (nij * n / (rows[i] * cols[j])).ln();
            }
        }
    }
    let denom = (h_truth + h_clusters) / T::of(2.0);
    if denom <= T::zero() {
        return Ok(T::zero());
    }
    Ok((mi / denom).max(T::zero()).min(T::one()))
}

/// Items split into the four routing groups of the open-world metric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OwmInputs {
    pub n_kk: usize,
    pub n_ku: usize,
    pub n_uk: usize,
    pub n_uu: usize,
    pub kk_predicted: Vec<i64>,
    pub kk_truth: Vec<i64>,
    pub uu_clusters: Vec<i64>,
    pub uu_truth: Vec<i64>,
}

impl OwmInputs {
    pub fn from_predictions(truth: &[GroundTruth], predictions: &[Prediction]) -> Result<Self> {
        if truth.len() != predictions.len() {
            return Err(OwlError::InvalidInput(
                "truth and prediction sequences differ in length".into(),
            ));
        }
        let mut out = Self::default();
        for (t, p) in truth.iter().zip(predictions) {
            match (t.known, p) {
                (true, Prediction::Known(k)) => {
                    out.n_kk += 1;
                    out.kk_predicted.push(*k as i64);
                    out.kk_truth.push(t.label);
                }
                (true, _) => out.n_ku += 1,
                (false, Prediction::Known(_)) => out.n_uk += 1,
                (false, p) => {
                    out.n_uu += 1;
                    out.uu_clusters.push(p.cluster_label());
                    out.uu_truth.push(t.label);
                }
            }
        }
        Ok(out)
    }

    pub fn total(&self) -> usize {
        self.n_kk + self.n_ku + self.n_uk + self.n_uu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnownMetric {
    #[default]
    Accuracy,
    MacroF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownMetric {
    #[default]
    B3,
    Nmi,
}

/// Metric slots of the generalized OWM; the default is accuracy + B3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OwmSlots {
    pub known: KnownMetric,
    pub unknown: UnknownMetric,
}

/// Per-group scores and the combined OWM value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwmScore<T> {
    pub known_score: T,
    pub unknown_score: T,
    pub owm: T,
}

pub fn owm_with<T: Scalar>(inputs: &OwmInputs, slots: OwmSlots) -> Result<OwmScore<T>> {
    let total = inputs.total();
    if total == 0 {
        return Err(OwlError::InvalidInput("OWM over zero items".into()));
    }
    let known_score = if inputs.n_kk == 0 {
        T::zero()
    } else {
        match slots.known {
            KnownMetric::Accuracy => accuracy(&inputs.kk_predicted, &inputs.kk_truth)?,
            KnownMetric::MacroF1 => macro_f1(&inputs.kk_predicted, &inputs.kk_truth)?,
        }
    };
    let unknown_score = if inputs.n_uu == 0 {
        T::zero()
    } else {
        match slots.unknown {
            UnknownMetric::B3 => b3::<T>(&inputs.uu_clusters, &inputs.uu_truth)?.f,
            UnknownMetric::Nmi => nmi(&inputs.uu_clusters, &inputs.uu_truth)?,
        }
    };
    let owm = combine_owm(inputs, known_score, unknown_score);
    Ok(OwmScore {
        known_score,
        unknown_score,
        owm,
    })
}

/// `(N_KK·known + N_UU·unknown) / (N_KK + N_KU + N_UK + N_UU)`.
pub fn combine_owm<T: Scalar>(counts: &OwmInputs, known_score: T, unknown_score: T) -> T {
    (T::of_usize(counts.n_kk) * known_score + T::of_usize(counts.n_uu) * unknown_score)
        / T::of_usize(counts.total())
}

pub fn owm<T: Scalar>(inputs: &OwmInputs) -> Result<T> {
    Ok(owm_with::<T>(inputs, OwmSlots::default())?.owm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy::<f64>(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy::<f64>(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy::<f64>(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn b3_worked_examples() {
        let perfect = b3::<f64>(&[5, 5, 7], &[0, 0, 1]).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f), (1.0, 1.0, 1.0));

        let s = b3::<f64>(&[1, 1, 1, 2], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(s.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.recall, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(s.f, 12.0 / 17.0, epsilon = 1e-12);

        // two equal classes merged into one cluster
        let merged = b3::<f64>(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(merged.precision, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(merged.recall, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(merged.f, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn b3_fuzzy_agrees_with_hard_on_one_hot() {
        let truth = [0i64, 0, 1, 1, 2];
        let clusters = [3i64, 3, 3, 4, 4];
        let one_hot = |labels: &[i64], k: usize| {
            let (ids, _) = dense_ids(labels);
            let mut m = Matrix::<f64>::zeros(labels.len(), k);
            for (i, &c) in ids.iter().enumerate() {
                m[(i, c)] = 1.0;
            }
            m
        };
        let fuzzy = b3_fuzzy(&one_hot(&truth, 3), &one_hot(&clusters, 2)).unwrap();
        let hard = b3::<f64>(&clusters, &truth).unwrap();
        assert_abs_diff_eq!(fuzzy.f, hard.f, epsilon = 1e-12);
    }

    #[test]
    fn b3_works_in_f32() {
        let s = b3::<f32>(&[1, 1, 1, 2], &[0, 0, 1, 1]).unwrap();
        assert!((s.f - 12.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn nmi_conventions() {
        assert_abs_diff_eq!(nmi::<f64>(&[0, 0, 1, 1], &[4, 4, 9, 9]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(nmi::<f64>(&[0, 0, 0, 0], &[1, 1, 2, 2]).unwrap(), 0.0);
        assert_eq!(nmi::<f64>(&[0, 0], &[1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_of_independent_labelings_is_small() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let a: Vec<i64> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<i64> = (0..1000).map(|_| rng.random_range(0..4)).collect();
        assert!(nmi::<f64>(&a, &b).unwrap() < 0.05);
    }

    #[test]
    fn macro_f1_perfect_and_partial() {
        assert_eq!(macro_f1::<f64>(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        // class 0: tp1 fp0 fn1 -> 2/3 ; class 1: tp1 fp1 fn0 -> 2/3
        assert_abs_diff_eq!(macro_f1::<f64>(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0, epsilon = 1e-12);
    }

    fn inputs(n_kk: usize, acc_hits: usize, n_uu_clusters: Vec<i64>, uu_truth: Vec<i64>, n_ku: usize, n_uk: usize) -> OwmInputs {
        let kk_truth = vec![0i64; n_kk];
        let kk_predicted = (0..n_kk).map(|i| if i < acc_hits { 0 } else { 1 }).collect();
        OwmInputs {
            n_kk,
            n_ku,
            n_uk,
            n_uu: uu_truth.len(),
            kk_predicted,
            kk_truth,
            uu_clusters: n_uu_clusters,
            uu_truth,
        }
    }

    #[test]
    fn owm_examples() {
        let all_known = inputs(10, 10, vec![], vec![], 0, 0);
        assert_eq!(owm::<f64>(&all_known).unwrap(), 1.0);

        let misrouted = inputs(0, 0, vec![], vec![], 4, 6);
        assert_eq!(owm::<f64>(&misrouted).unwrap(), 0.0);

        assert!(owm::<f64>(&OwmInputs::default()).is_err());
    }

    #[test]
    fn owm_weighted_combination() {
        let counts = OwmInputs {
            n_kk: 60,
            n_ku: 5,
            n_uk: 5,
            n_uu: 30,
            ..Default::default()
        };
        assert_abs_diff_eq!(combine_owm(&counts, 0.9f64, 0.6), 0.72, epsilon = 1e-12);

        let inp = inputs(60, 54, (0..30).map(|i| i % 2).collect(), (0..30).map(|i| i % 3).collect(), 5, 5);
        let f = b3::<f64>(&inp.uu_clusters, &inp.uu_truth).unwrap().f;
        assert_abs_diff_eq!(owm::<f64>(&inp).unwrap(), (54.0 + 30.0 * f) / 100.0, epsilon = 1e-12);
    }

    #[test]
    fn owm_from_predictions_routes_groups() {
        let truth = vec![
            GroundTruth { label: 0, known: true },
            GroundTruth { label: 1, known: true },
            GroundTruth { label: 7, known: false },
            GroundTruth { label: 7, known: false },
            GroundTruth { label: 8, known: false },
        ];
        let preds = vec![
            Prediction::Known(0),
            Prediction::Unknown,
            Prediction::Discovered(0),
            Prediction::Discovered(0),
            Prediction::Known(1),
        ];
        let inp = OwmInputs::from_predictions(&truth, &preds).unwrap();
        assert_eq!((inp.n_kk, inp.n_ku, inp.n_uk, inp.n_uu), (1, 1, 1, 2));
        // (1·1 + 2·1) / 5
        assert_abs_diff_eq!(owm::<f64>(&inp).unwrap(), 0.6, epsilon = 1e-12);
    }
}
