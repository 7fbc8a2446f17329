//! Datasets, file loaders and device partitions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::DataError;

/// Labeled samples with features scaled to `[0, 1]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Vec<f32>,
    dim: usize,
    labels: Vec<u32>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f32>,
        dim: usize,
        labels: Vec<u32>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if dim == 0 || num_classes == 0 {
            return Err(DataError::Invalid("dimension and class count must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(DataError::Invalid(format!(
                "{} feature values for {} samples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// First `n` samples, in order.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.features.truncate(n * self.dim);
        self
    }

    /// Copy holding only the given samples, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.features(i));
        }
        Self {
            name: self.name.clone(),
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Copy with every feature multiplied by `factor`. Scaled data may leave
    /// the unit box.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            features: self.features.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn features_in_unit_box(&self) -> bool {
        self.features.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mnist" => Ok(Self::Mnist),
            "cifar10" | "cifar-10" => Ok(Self::Cifar10),
            other => Err(format!("unknown dataset {other:?} (expected mnist or cifar10)")),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

const MNIST_IMAGES_MAGIC: u32 = 0x0000_0803;
const MNIST_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3072;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| parse_err(path, offset, "truncated header"))
}

/// Reads an IDX image/label file pair.
pub fn load_mnist(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = be_u32(&images, 0, images_path)?;
    if magic != MNIST_IMAGES_MAGIC {
        return Err(parse_err(
            images_path,
            0,
            format!("bad magic {magic:#010x}, expected {MNIST_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let dim = rows * cols;
    let expected = 16 + count * dim;
    if images.len() != expected {
        return Err(parse_err(
            images_path,
            images.len().min(expected),
            format!("file holds {} bytes, header implies {expected}", images.len()),
        ));
    }

    let magic = be_u32(&labels, 0, labels_path)?;
    if magic != MNIST_LABELS_MAGIC {
        return Err(parse_err(
            labels_path,
            0,
            format!("bad magic {magic:#010x}, expected {MNIST_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = be_u32(&labels, 4, labels_path)? as usize;
    if label_count != count {
        return Err(parse_err(
            labels_path,
            4,
            format!("{label_count} labels for {count} images"),
        ));
    }
    if labels.len() != 8 + count {
        return Err(parse_err(
            labels_path,
            labels.len().min(8 + count),
            format!("file holds {} bytes, header implies {}", labels.len(), 8 + count),
        ));
    }
    if let Some(pos) = labels[8..].iter().position(|&l| l > 9) {
        return Err(parse_err(labels_path, 8 + pos, format!("label {} > 9", labels[8 + pos])));
    }

    let n = limit.map_or(count, |l| l.min(count));
    let features = images[16..16 + n * dim]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    let labels = labels[8..8 + n].iter().map(|&l| u32::from(l)).collect();
    Dataset::new("mnist", features, dim, labels, 10)
}

/// Reads CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record).
pub fn load_cifar10(batches: &[PathBuf], limit: Option<usize>) -> Result<Dataset, DataError> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let cap = limit.unwrap_or(usize::MAX);
    for path in batches {
        if labels.len() >= cap {
            break;
        }
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(parse_err(
                path,
                bytes.len() - bytes.len() % CIFAR_RECORD,
                format!("{} bytes is not a whole number of {CIFAR_RECORD}-byte records", bytes.len()),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] > 9 {
                return Err(parse_err(path, r * CIFAR_RECORD, format!("label {} > 9", rec[0])));
            }
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if labels.len() >= cap {
                break;
            }
            labels.push(u32::from(rec[0]));
            features.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    Dataset::new("cifar10", features, 3072, labels, 10)
}

/// Loads a standard dataset split from `dir` using the usual file names.
pub fn load_dataset(
    kind: DatasetKind,
    dir: &Path,
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    match kind {
        DatasetKind::Mnist => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let pick = |stem: &str| {
                let dashed = dir.join(format!("{prefix}-{stem}-ubyte"));
                if dashed.exists() {
                    dashed
                } else {
                    dir.join(format!("{prefix}-{}-ubyte", stem.replacen('-', ".", 1)))
                }
            };
            load_mnist(&pick("images-idx3"), &pick("labels-idx1"), limit)
        }
        DatasetKind::Cifar10 => {
            let base = if dir.join("cifar-10-batches-bin").is_dir() {
                dir.join("cifar-10-batches-bin")
            } else {
                dir.to_path_buf()
            };
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5).map(|k| base.join(format!("data_batch_{k}.bin"))).collect(),
                Split::Test => vec![base.join("test_batch.bin")],
            };
            load_cifar10(&files, limit)
        }
    }
}

/// Gaussian blobs around uniformly random class centres in `[0,1]^d`, clipped
/// to the unit box. Sample `i` has label `i % num_classes`.
pub fn synthesize_blobs(
    n: usize,
    dim: usize,
    num_classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if num_classes == 0 || n < num_classes || dim == 0 {
        return Err(DataError::Invalid(format!(
            "blobs need n >= classes > 0 and dim > 0 (n={n}, classes={num_classes}, dim={dim})"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(DataError::Invalid(format!("spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..num_classes * dim).map(|_| rng.random::<f64>()).collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        labels.push(c as u32);
        for k in 0..dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let v = (centers[c * dim + k] + spread * noise).clamp(0.0, 1.0);
            features.push(v as f32);
        }
    }
    Dataset::new("blobs", features, dim, labels, num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    NonIid,
}

impl FromStr for PartitionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" => Ok(Self::Iid),
            "non-iid" | "noniid" | "non_iid" => Ok(Self::NonIid),
            other => Err(format!("unknown partition mode {other:?} (expected iid or non-iid)")),
        }
    }
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iid => "iid",
            Self::NonIid => "non-iid",
        })
    }
}

/// Disjoint per-device index lists into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    mode: PartitionMode,
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_assignments(mode: PartitionMode, assignments: Vec<Vec<usize>>) -> Self {
        Self { mode, assignments }
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn num_devices(&self) -> usize {
        self.assignments.len()
    }

    pub fn device(&self, i: usize) -> &[usize] {
        &self.assignments[i]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<usize> = self.assignments.iter().flatten().copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == n
    }
}

/// Splits `dataset` across `m` devices.
///
/// IID: a seeded shuffle dealt round-robin, so sizes differ by at most one.
/// Non-IID: device `k` holds only class `k % num_classes`; devices sharing a
/// class deal its (shuffled) samples round-robin.
pub fn partition(
    dataset: &Dataset,
    m: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Partition, DataError> {
    if m == 0 {
        return Err(DataError::Partition("need at least one device".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![Vec::new(); m];
    match mode {
        PartitionMode::Iid => {
            if dataset.len() < m {
                return Err(DataError::Partition(format!(
                    "{} samples cannot cover {m} devices",
                    dataset.len()
                )));
            }
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            for (pos, idx) in order.into_iter().enumerate() {
                assignments[pos % m].push(idx);
            }
        }
        PartitionMode::NonIid => {
            let c = dataset.num_classes();
            let mut by_class = vec![Vec::new(); c];
            for i in 0..dataset.len() {
                by_class[dataset.label(i)].push(i);
            }
            for (class, mut members) in by_class.into_iter().enumerate() {
                let owners: Vec<usize> = (class..m).step_by(c).collect();
                if owners.is_empty() {
                    continue;
                }
                if members.len() < owners.len() {
                    return Err(DataError::Partition(format!(
                        "class {class} has {} samples for {} devices",
                        members.len(),
                        owners.len()
                    )));
                }
                members.shuffle(&mut rng);
                for (pos, idx) in members.into_iter().enumerate() {
                    assignments[owners[pos % owners.len()]].push(idx);
                }
            }
        }
    }
    Ok(Partition { mode, assignments })
}
