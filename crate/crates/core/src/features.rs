//! Feature files, feature fusion and synthetic labeled streams.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "OWLF" | version: u32 | dim: u32 | count: u64 | count × dim × f32 (row-major)
//! ```
//!
//! Labels and source ids live in a sidecar table next to the binary file
//! (`<stem>.labels.tsv`), one `id<TAB>label` row per vector after a header.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{OwlError, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"OWLF";
pub const FORMAT_VERSION: u32 = 1;
pub const UNLABELED: i64 = -1;

/// Fixed-dimension feature vectors with their (scorer-only) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    pub dim: usize,
    pub vectors: Vec<Vec<T>>,
    pub labels: Vec<i64>,
    pub source_ids: Vec<String>,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            labels: Vec::new(),
            source_ids: Vec::new(),
        }
    }

    pub fn new(dim: usize, vectors: Vec<Vec<T>>, labels: Vec<i64>, source_ids: Vec<String>) -> Result<Self> {
        let set = Self {
            dim,
            vectors,
            labels,
            source_ids,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(OwlError::InvalidInput("feature dimension must be positive".into()));
        }
        if self.labels.len() != self.vectors.len() || self.source_ids.len() != self.vectors.len() {
            return Err(OwlError::InvalidInput(format!(
                "{} vectors but {} labels and {} ids",
                self.vectors.len(),
                self.labels.len(),
                self.source_ids.len()
            )));
        }
        for (row, v) in self.vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(OwlError::DimMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
            if let Some(col) = v.iter().position(|x| !x.is_finite()) {
                return Err(OwlError::NonFinite { row, col });
            }
        }
        Ok(())
    }

    pub fn push(&mut self, vector: Vec<T>, label: i64, id: String) {
        self.vectors.push(vector);
        self.labels.push(label);
        self.source_ids.push(id);
    }

    /// Distinct labels in ascending order.
    pub fn label_set(&self) -> BTreeSet<i64> {
        self.labels.iter().copied().collect()
    }

    /// Vectors grouped by label, labels ascending.
    pub fn by_label(&self) -> Vec<(i64, Vec<Vec<T>>)> {
        let mut groups: std::collections::BTreeMap<i64, Vec<Vec<T>>> = Default::default();
        for (v, &l) in self.vectors.iter().zip(&self.labels) {
            groups.entry(l).or_default().push(v.clone());
        }
        groups.into_iter().collect()
    }

    /// Row-wise concatenation with another set of equal length.
    pub fn concat_columns(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(OwlError::InvalidInput(format!(
                "cannot fuse sets of {} and {} rows",
                self.len(),
                other.len()
            )));
        }
        if let Some(row) = (0..self.len()).find(|&i| self.labels[i] != other.labels[i]) {
            return Err(OwlError::InvalidInput(format!(
                "label disagreement at row {row}: {} vs {}",
                self.labels[row], other.labels[row]
            )));
        }
        let vectors = self
            .vectors
            .iter()
            .zip(&other.vectors)
            .map(|(a, b)| a.iter().chain(b).copied().collect())
            .collect();
        Ok(Self {
            dim: self.dim + other.dim,
            vectors,
            labels: self.labels.clone(),
            source_ids: self.source_ids.clone(),
        })
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            dim: self.dim,
            vectors: rows.iter().map(|&i| self.vectors[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            source_ids: rows.iter().map(|&i| self.source_ids[i].clone()).collect(),
        }
    }

    /// Splits into consecutive chunks of `size` rows (the last may be short).
    pub fn chunks(&self, size: usize) -> Vec<Self> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(size.max(1)).map(|c| self.select(c)).collect()
    }
}

/// Path of the label sidecar belonging to a feature file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("labels.tsv")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OwlError + '_ {
    move |source| OwlError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_features<T: Scalar>(set: &FeatureSet<T>, destination: &Path) -> Result<()> {
    set.validate()?;
    if let Some(bad) = set.source_ids.iter().find(|id| id.contains(['\t', '\n', '\r'])) {
        return Err(OwlError::InvalidInput(format!("source id {bad:?} contains a tab or newline")));
    }
    let file = File::create(destination).map_err(io_err(destination))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(set.dim as u32)?;
        w.write_u64::<LittleEndian>(set.len() as u64)?;
        for v in &set.vectors {
            for &x in v {
                w.write_f32::<LittleEndian>(x.to_f32().unwrap_or(f32::NAN))?;
            }
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(destination))?;

    let side = sidecar_path(destination);
    let file = File::create(&side).map_err(io_err(&side))?;
    let mut w = BufWriter::new(file);
    let write_side = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "id\tlabel")?;
        for (id, label) in set.source_ids.iter().zip(&set.labels) {
            writeln!(w, "{id}\t{label}")?;
        }
        w.flush()
    };
    write_side(&mut w).map_err(io_err(&side))?;
    Ok(())
}

fn read_one<T: Scalar>(path: &Path) -> Result<FeatureSet<T>> {
    let fmt = |reason: &str| OwlError::Format {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt("truncated header"))?;
    if &magic != MAGIC {
        return Err(fmt("magic mismatch"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| fmt("truncated header"))?;
    if version != FORMAT_VERSION {
        return Err(fmt(&format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>().map_err(|_| fmt("truncated header"))? as usize;
    let count = r.read_u64::<LittleEndian>().map_err(|_| fmt("truncated header"))? as usize;
    if dim == 0 {
        return Err(fmt("zero dimension"));
    }
    let mut vectors = Vec::with_capacity(count);
    for row in 0..count {
        let mut v = Vec::with_capacity(dim);
        for col in 0..dim {
            let x = r.read_f32::<LittleEndian>().map_err(|_| fmt("truncated payload"))?;
            if !x.is_finite() {
                return Err(OwlError::NonFinite { row, col });
            }
            v.push(T::of(x as f64));
        }
        vectors.push(v);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(io_err(path))? != 0 {
        return Err(fmt("trailing bytes after payload"));
    }

    let side = sidecar_path(path);
    let (labels, source_ids) = if side.exists() {
        read_sidecar(&side, count)?
    } else {
        (vec![UNLABELED; count], (0..count).map(|i| format!("row{i}")).collect())
    };
    FeatureSet::new(dim, vectors, labels, source_ids)
}

fn read_sidecar(path: &Path, count: usize) -> Result<(Vec<i64>, Vec<String>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut labels = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if n == 0 {
            continue;
        }
        let (id, label) = line.split_once('\t').ok_or_else(|| OwlError::Format {
            path: path.display().to_string(),
            reason: format!("line {} lacks a tab", n + 1),
        })?;
        let label = label.trim().parse::<i64>().map_err(|e| OwlError::Format {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        ids.push(id.to_string());
        labels.push(label);
    }
    if labels.len() != count {
        return Err(OwlError::Format {
            path: path.display().to_string(),
            reason: format!("{} label rows for {count} vectors", labels.len()),
        });
    }
    Ok((labels, ids))
}

/// Loads one feature file, or fuses several by per-row concatenation in the
/// given order. Labels and ids come from the first source.
pub fn load_features<T: Scalar, P: AsRef<Path>>(sources: &[P]) -> Result<FeatureSet<T>> {
    let (first, rest) = sources
        .split_first()
        .ok_or_else(|| OwlError::InvalidInput("no feature sources given".into()))?;
    let mut fused = read_one(first.as_ref())?;
    for src in rest {
        let next = read_one(src.as_ref())?;
        fused = fused.concat_columns(&next)?;
    }
    Ok(fused)
}

/// Shape of a synthetic open-world stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub known_class_count: usize,
    pub unknown_class_count: usize,
    pub images_per_unknown_class: usize,
    /// Stream items drawn from each known class.
    pub images_per_known_class: usize,
    /// Labeled pretraining items per known class.
    pub pretrain_per_class: usize,
    /// Labeled validation items per known class.
    pub validation_per_class: usize,
    pub batch_size: usize,
    pub batch_count: usize,
    pub run_count: usize,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self::desk_scale(5)
    }
}

impl StreamConfig {
    /// Full protocol: 50 batches of 100, half known and half unknown, the
    /// unknown half split evenly over `unknown_classes` classes (U5: 5 × 500).
    pub fn protocol(unknown_classes: usize, known_classes: usize) -> Self {
        Self {
            known_class_count: known_classes,
            unknown_class_count: unknown_classes,
            images_per_unknown_class: 2500 / unknown_classes.max(1),
            images_per_known_class: 2500 / known_classes.max(1),
            pretrain_per_class: 50,
            validation_per_class: 30,
            batch_size: 100,
            batch_count: 50,
            run_count: 5,
            seed: 0,
        }
    }

    /// Laptop-sized stream: 10 known classes, 20 batches of 50, half unknown.
    pub fn desk_scale(unknown_classes: usize) -> Self {
        Self {
            known_class_count: 10,
            unknown_class_count: unknown_classes,
            images_per_unknown_class: 500 / unknown_classes.max(1),
            images_per_known_class: 50,
            pretrain_per_class: 50,
            validation_per_class: 30,
            batch_size: 50,
            batch_count: 20,
            run_count: 5,
            seed: 0,
        }
    }

    pub fn stream_len(&self) -> usize {
        self.batch_size * self.batch_count
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OwlError::InvalidConfig(m));
        if self.known_class_count == 0 {
            return bad("known_class_count must be positive".into());
        }
        if self.batch_size == 0 || self.batch_count == 0 {
            return bad("batch_size and batch_count must be positive".into());
        }
        if self.pretrain_per_class < 2 || self.validation_per_class < 1 {
            return bad("need ≥ 2 pretraining and ≥ 1 validation items per known class".into());
        }
        let total = self.known_class_count * self.images_per_known_class
            + self.unknown_class_count * self.images_per_unknown_class;
        if total != self.stream_len() {
            return bad(format!(
                "known + unknown pools hold {total} items but batches need {}",
                self.stream_len()
            ));
        }
        Ok(())
    }
}

/// Gaussian blob geometry: class means on a hypersphere, isotropic spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobGeometry {
    pub dim: usize,
    pub radius: f64,
    pub spread: f64,
    /// Minimum pairwise distance between class means.
    pub min_separation: f64,
}

impl Default for BlobGeometry {
    fn default() -> Self {
        Self {
            dim: 32,
            radius: 2.0,
            spread: 0.1,
            min_separation: 1.0,
        }
    }
}

/// Labeled data for one run: pretraining and validation sets over the known
/// classes, and the evaluation stream cut into batches.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamData<T> {
    pub pretrain: FeatureSet<T>,
    pub validation: FeatureSet<T>,
    pub batches: Vec<FeatureSet<T>>,
    pub known_labels: BTreeSet<i64>,
    pub class_means: Vec<Vec<f64>>,
}

impl<T: Scalar> StreamData<T> {
    pub fn stream_len(&self) -> usize {
        self.batches.iter().map(|b| b.len()).sum()
    }

    pub fn is_known(&self, label: i64) -> bool {
        self.known_labels.contains(&label)
    }

    /// Assembles run data from loaded sets; stream order is shuffled with `seed`.
    pub fn from_sets(
        pretrain: FeatureSet<T>,
        validation: FeatureSet<T>,
        stream: FeatureSet<T>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if pretrain.dim != validation.dim || pretrain.dim != stream.dim {
            return Err(OwlError::DimMismatch {
                expected: pretrain.dim,
                got: if pretrain.dim != validation.dim { validation.dim } else { stream.dim },
            });
        }
        let mut order: Vec<usize> = (0..stream.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = stream.select(&order);
        Ok(Self {
            known_labels: pretrain.label_set(),
            batches: shuffled.chunks(batch_size),
            pretrain,
            validation,
            class_means: Vec::new(),
        })
    }
}

fn sample_means(rng: &mut ChaCha8Rng, count: usize, geometry: &BlobGeometry) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 10_000;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    for class in 0..count {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let raw: Vec<f64> = (0..geometry.dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            let candidate: Vec<f64> = raw.iter().map(|x| x / n * geometry.radius).collect();
            let ok = means.iter().all(|m| {
                m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
                    >= geometry.min_separation
            });
            if ok {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(OwlError::InvalidConfig(format!(
                "cannot place class {class} of {count}: geometry (dim {}, radius {}, separation {}) is too crowded",
                geometry.dim, geometry.radius, geometry.min_separation
            )));
        }
    }
    Ok(means)
}

fn sample_point<T: Scalar>(rng: &mut ChaCha8Rng, mean: &[f64], spread: f64) -> Vec<T> {
    mean.iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(m + spread * z)
        })
        .collect()
}

/// Generates pretraining, validation and a shuffled stream. Known classes are
/// labeled `0..K`, unknown classes `K..K+U`; unknown classes appear only in
/// the stream. A pure function of `(config, geometry)` including the seed.
pub fn synthesize_stream<T: Scalar>(config: &StreamConfig, geometry: &BlobGeometry) -> Result<StreamData<T>> {
    config.validate()?;
    if geometry.dim == 0 || !(geometry.spread >= 0.0) || !(geometry.radius > 0.0) {
        return Err(OwlError::InvalidConfig("geometry needs dim > 0, radius > 0, spread ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.known_class_count;
    let means = sample_means(&mut rng, k + config.unknown_class_count, geometry)?;

    let mut pretrain = FeatureSet::empty(geometry.dim);
    let mut validation = FeatureSet::empty(geometry.dim);
    for (class, mean) in means.iter().enumerate().take(k) {
        for i in 0..config.pretrain_per_class {
            pretrain.push(sample_point(&mut rng, mean, geometry.spread), class as i64, format!("pre-{class}-{i}"));
        }
    }
    for (class, mean) in means.iter().enumerate().take(k) {
        for i in 0..config.validation_per_class {
            validation.push(sample_point(&mut rng, mean, geometry.spread), class as i64, format!("val-{class}-{i}"));
        }
    }
    let mut stream = FeatureSet::empty(geometry.dim);
    for (class, mean) in means.iter().enumerate() {
        let n = if class < k {
            config.images_per_known_class
        } else {
            config.images_per_unknown_class
        };
        for i in 0..n {
            stream.push(sample_point(&mut rng, mean, geometry.spread), class as i64, format!("str-{class}-{i}"));
        }
    }
    let mut order: Vec<usize> = (0..stream.len()).collect();
    order.shuffle(&mut rng);
    let stream = stream.select(&order);
    Ok(StreamData {
        pretrain,
        validation,
        batches: stream.chunks(config.batch_size),
        known_labels: (0..k as i64).collect(),
        class_means: means,
    })
}
