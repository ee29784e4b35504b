//! Residual buffer management: when to cluster, which clusters to admit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::discovery::{finch_partitions, select_partition, DistanceMetric, PartitionMode};
use crate::error::{OwlError, Result};
use crate::scalar::{dot, mean_vector, norm, sq_dist, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    /// Cluster only when the buffer holds more than this many items.
    pub psi: usize,
    /// Proceed only when the selected partition has more clusters than this.
    pub gamma: usize,
    /// Admit only clusters with more members than this.
    pub rho: usize,
    /// Lowest-entropy validation clusters labeled positive for the gate.
    pub n_pos: usize,
    pub gate_enabled: bool,
    pub partition_mode: PartitionMode,
    pub metric: DistanceMetric,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            psi: 250,
            gamma: 4,
            rho: 20,
            n_pos: 1,
            gate_enabled: true,
            partition_mode: PartitionMode::Sp,
            metric: DistanceMetric::Euclidean,
        }
    }
}

impl ManagerConfig {
    /// Learns from every detection: small trigger, no cluster-count or
    /// quality checks, finest partition.
    pub fn unmanaged() -> Self {
        Self {
            psi: 50,
            gamma: 0,
            rho: 2,
            gate_enabled: false,
            partition_mode: PartitionMode::Fp,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho < 2 {
            return Err(OwlError::InvalidConfig("rho must be at least 2".into()));
        }
        if self.n_pos == 0 {
            return Err(OwlError::InvalidConfig("n_pos must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats<T> {
    /// Mean squared distance to the centroid.
    pub euclidean_variance: T,
    /// Mean of `1 − cos(f, c)`.
    pub cosine_variance: T,
    pub size: usize,
}

pub fn cluster_stats<T: Scalar, R: AsRef<[T]>>(features: &[R]) -> Result<(Vec<T>, ClusterStats<T>)> {
    if features.is_empty() {
        return Err(OwlError::InvalidInput("cluster statistics need at least one feature".into()));
    }
    let c = mean_vector(features);
    let n = T::of_usize(features.len());
    let floor = T::of(1e-12);
    let cn = norm(&c).max(floor);
    let mut ve = T::zero();
    let mut vc = T::zero();
    for f in features {
        let f = f.as_ref();
        ve = ve + sq_dist(f, &c);
        vc = vc + T::one() - dot(f, &c) / (norm(f).max(floor) * cn);
    }
    Ok((
        c,
        ClusterStats {
            euclidean_variance: ve / n,
            cosine_variance: vc / n,
            size: features.len(),
        },
    ))
}

/// Shannon entropy (natural log) of the label histogram.
pub fn label_entropy(labels: &[i64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(OwlError::InvalidInput("entropy of an empty cluster".into()));
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let n = labels.len() as f64;
    Ok(counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Linear SVM over standardized `(v_e, v_c)`; positive decision admits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityGate {
    pub weights: [f64; 2],
    pub bias: f64,
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    pub iterations: usize,
    /// Weight each class by `n / (2 n_class)` in the hinge loss.
    pub balanced: bool,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { c: 1.0, iterations: 10_000, balanced: true }
    }
}

impl QualityGate {
    pub fn decision<T: Scalar>(&self, stats: &ClusterStats<T>) -> f64 {
        let x = [stats.euclidean_variance.as_f64(), stats.cosine_variance.as_f64()];
        self.decision_raw(x)
    }

    pub fn decision_raw(&self, x: [f64; 2]) -> f64 {
        (0..2).map(|k| self.weights[k] * (x[k] - self.mean[k]) / self.std[k]).sum::<f64>() + self.bias
    }

    pub fn accepts<T: Scalar>(&self, stats: &ClusterStats<T>) -> bool {
        self.decision(stats) > 0.0
    }

    /// Fits a soft-margin linear SVM by subgradient descent on the primal,
    /// keeping the iterate with the lowest objective.
    pub fn fit(points: &[[f64; 2]], positive: &[bool], opts: &SvmOptions) -> Result<Self> {
        if points.len() != positive.len() || points.is_empty() {
            return Err(OwlError::InvalidInput("svm needs one label per point".into()));
        }
        let n = points.len() as f64;
        let n_pos = positive.iter().filter(|&&p| p).count();
        let n_neg = points.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(OwlError::InsufficientData("svm needs both positive and negative clusters".into()));
        }
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for k in 0..2 {
            mean[k] = points.iter().map(|p| p[k]).sum::<f64>() / n;
            let var = points.iter().map(|p| (p[k] - mean[k]).powi(2)).sum::<f64>() / n;
            std[k] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let xs: Vec<[f64; 2]> = points
            .iter()
            .map(|p| [(p[0] - mean[0]) / std[0], (p[1] - mean[1]) / std[1]])
            .collect();
        let ys: Vec<f64> = positive.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
        let cw: Vec<f64> = positive
            .iter()
            .map(|&p| match (opts.balanced, p) {
                (false, _) => 1.0,
                (true, true) => n / (2.0 * n_pos as f64),
                (true, false) => n / (2.0 * n_neg as f64),
            })
            .collect();
        let objective = |w: &[f64; 2], b: f64| {
            0.5 * (w[0] * w[0] + w[1] * w[1])
                + opts.c
                    * xs.iter()
                        .zip(&ys)
                        .zip(&cw)
                        .map(|((x, y), c)| c * (1.0 - y * (w[0] * x[0] + w[1] * x[1] + b)).max(0.0))
                        .sum::<f64>()
        };
        let mut w = [0.0; 2];
        let mut b = 0.0;
        let mut best = (objective(&w, b), w, b);
        for t in 1..=opts.iterations {
            let mut gw = w;
            let mut gb = 0.0;
            for ((x, y), c) in xs.iter().zip(&ys).zip(&cw) {
                if y * (w[0] * x[0] + w[1] * x[1] + b) < 1.0 {
                    gw[0] -= opts.c * c * y * x[0];
                    gw[1] -= opts.c * c * y * x[1];
                    gb -= opts.c * c * y;
                }
            }
            let eta = 1.0 / (n * (t as f64).sqrt());
            w[0] -= eta * gw[0];
            w[1] -= eta * gw[1];
            b -= eta * gb;
            let obj = objective(&w, b);
            if obj < best.0 {
                best = (obj, w, b);
            }
        }
        Ok(Self { weights: best.1, bias: best.2, mean, std })
    }

    /// Labels the `n_pos` lowest-entropy clusters positive (ties by lowest
    /// index) and fits the SVM on their statistics.
    pub fn train<T: Scalar>(clusters: &[(ClusterStats<T>, f64)], n_pos: usize, opts: &SvmOptions) -> Result<Self> {
        if clusters.len() < n_pos + 1 {
            return Err(OwlError::InsufficientData(format!(
                "gate calibration needs {} clusters, got {}",
                n_pos + 1,
                clusters.len()
            )));
        }
        let mut order: Vec<usize> = (0..clusters.len()).collect();
        order.sort_by(|&a, &b| clusters[a].1.partial_cmp(&clusters[b].1).expect("finite entropy").then(a.cmp(&b)));
        let mut positive = vec![false; clusters.len()];
        for &i in order.iter().take(n_pos) {
            positive[i] = true;
        }
        let points: Vec<[f64; 2]> = clusters
            .iter()
            .map(|(s, _)| [s.euclidean_variance.as_f64(), s.cosine_variance.as_f64()])
            .collect();
        Self::fit(&points, &positive, opts)
    }

    /// Calibrates on labeled validation features: clusters of every FINCH
    /// level with more than `rho` members, finest level first.
    pub fn calibrate<T: Scalar>(features: &[Vec<T>], labels: &[i64], config: &ManagerConfig, opts: &SvmOptions) -> Result<Self> {
        let set = finch_partitions(features, config.metric)?;
        let mut clusters = Vec::new();
        for partition in &set.partitions {
            let k = partition.iter().copied().max().map_or(0, |m| m + 1);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, &c) in partition.iter().enumerate() {
                members[c].push(i);
            }
            for m in members.into_iter().filter(|m| m.len() > config.rho) {
                let feats: Vec<&Vec<T>> = m.iter().map(|&i| &features[i]).collect();
                let (_, stats) = cluster_stats(&feats)?;
                let ent = label_entropy(&m.iter().map(|&i| labels[i]).collect::<Vec<_>>())?;
                clusters.push((stats, ent));
            }
        }
        Self::train(&clusters, config.n_pos, opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry<T> {
    pub feature: Vec<T>,
    pub stream_index: usize,
    /// Ground truth; read only by the labeled upper-bound mode.
    pub label: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ResidualBuffer<T> {
    pub entries: Vec<ResidualEntry<T>>,
}

impl<T: Scalar> ResidualBuffer<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, entry: ResidualEntry<T>) {
        self.entries.push(entry);
    }

    pub fn features(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.feature.clone()).collect()
    }

    /// Moves the entries at `groups` (index lists) out of the buffer.
    fn take_groups(&mut self, groups: &[Vec<usize>]) -> Vec<Vec<ResidualEntry<T>>> {
        let mut taken = vec![false; self.entries.len()];
        for g in groups {
            for &i in g {
                taken[i] = true;
            }
        }
        let out = groups
            .iter()
            .map(|g| g.iter().map(|&i| self.entries[i].clone()).collect())
            .collect();
        let mut idx = 0;
        self.entries.retain(|_| {
            let keep = !taken[idx];
            idx += 1;
            keep
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ManageOutcome<T> {
    pub admitted: Vec<Vec<ResidualEntry<T>>>,
    /// Clusters in the selected partition, when clustering ran.
    pub cluster_count: Option<usize>,
}

/// Applies the cluster-count, size and gate checks to a given labeling of
/// the buffer and moves admitted clusters out of it.
pub fn admit_clusters<T: Scalar>(
    buffer: &mut ResidualBuffer<T>,
    labels: &[usize],
    config: &ManagerConfig,
    gate: Option<&QualityGate>,
) -> Result<ManageOutcome<T>> {
    if labels.len() != buffer.len() {
        return Err(OwlError::InvalidInput("one cluster label per buffered item required".into()));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    members.retain(|m| !m.is_empty());
    let cluster_count = Some(members.len());
    if members.len() <= config.gamma {
        return Ok(ManageOutcome { admitted: Vec::new(), cluster_count });
    }
    let mut chosen = Vec::new();
    for m in members {
        if m.len() <= config.rho {
            continue;
        }
        if let (true, Some(g)) = (config.gate_enabled, gate) {
            let feats: Vec<&Vec<T>> = m.iter().map(|&i| &buffer.entries[i].feature).collect();
            let (_, stats) = cluster_stats(&feats)?;
            if !g.accepts(&stats) {
                continue;
            }
        }
        chosen.push(m);
    }
    Ok(ManageOutcome { admitted: buffer.take_groups(&chosen), cluster_count })
}

/// Clusters the buffer once it exceeds `psi` and admits qualifying clusters.
pub fn manage_step<T: Scalar>(
    buffer: &mut ResidualBuffer<T>,
    config: &ManagerConfig,
    gate: Option<&QualityGate>,
) -> Result<ManageOutcome<T>> {
    if buffer.len() <= config.psi || buffer.len() < 2 {
        return Ok(ManageOutcome::default());
    }
    if config.gate_enabled && gate.is_none() {
        return Err(OwlError::InvalidConfig("quality gate enabled but not calibrated".into()));
    }
    let set = finch_partitions(&buffer.features(), config.metric)?;
    let labels = select_partition(&set, config.partition_mode)?.to_vec();
    admit_clusters(buffer, &labels, config, gate)
}

/// Upper-bound variant: groups the buffer by ground-truth label and admits
/// groups with more than `rho` members once the buffer exceeds `psi`.
pub fn manage_step_labeled<T: Scalar>(buffer: &mut ResidualBuffer<T>, config: &ManagerConfig) -> Result<ManageOutcome<T>> {
    if buffer.len() <= config.psi {
        return Ok(ManageOutcome::default());
    }
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in buffer.entries.iter().enumerate() {
        let label = e
            .label
            .ok_or_else(|| OwlError::InvalidInput("labeled management needs labels on every entry".into()))?;
        groups.entry(label).or_default().push(i);
    }
    let cluster_count = Some(groups.len());
    let chosen: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() > config.rho).collect();
    Ok(ManageOutcome { admitted: buffer.take_groups(&chosen), cluster_count })
}
