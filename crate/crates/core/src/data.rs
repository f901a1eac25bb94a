//! Dataset ingestion (MNIST IDX, CIFAR-10 binary), seeded batching and class
//! pooling maps.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Channel-major image geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Number of scalar entries in one image.
    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Mnist,
    Cifar10,
}

impl std::str::FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(Self::Mnist),
            "cifar10" | "cifar-10" => Ok(Self::Cifar10),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub split: Split,
}

impl DatasetSpec {
    pub const fn new(name: DatasetName, split: Split) -> Self {
        Self { name, split }
    }

    pub const fn num_classes(&self) -> usize {
        10
    }

    pub const fn image_shape(&self) -> ImageShape {
        match self.name {
            DatasetName::Mnist => ImageShape::new(1, 28, 28),
            DatasetName::Cifar10 => ImageShape::new(3, 32, 32),
        }
    }

    /// Number of examples in the full split.
    pub const fn expected_len(&self) -> usize {
        match (self.name, self.split) {
            (DatasetName::Mnist, Split::Train) => 60_000,
            (DatasetName::Cifar10, Split::Train) => 50_000,
            (_, Split::Test) => 10_000,
        }
    }
}

/// A single image with its class label. Pixels are in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageExample<T> {
    pub pixels: Array1<T>,
    pub shape: ImageShape,
    pub label: usize,
}

/// An in-memory split: one flattened image per row.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    shape: ImageShape,
    num_classes: usize,
    images: Array2<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(shape: ImageShape, num_classes: usize, images: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        if images.ncols() != shape.len() {
            return Err(Error::Shape(format!(
                "images have {} columns, shape {shape} needs {}",
                images.ncols(),
                shape.len()
            )));
        }
        if images.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} images but {} labels", images.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Domain(format!("label {bad} outside [0, {num_classes})")));
        }
        if images.iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::Domain("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { shape, num_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Array2<T> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> ImageExample<T> {
        ImageExample { pixels: self.images.row(i).to_owned(), shape: self.shape, label: self.labels[i] }
    }

    /// First `n` examples (all of them when `n >= len`).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            shape: self.shape,
            num_classes: self.num_classes,
            images: self.images.slice(ndarray::s![..n, ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Rows at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Batch<T> {
        Batch { images: self.images.select(Axis(0), indices), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Per-pixel mean image over the split.
    pub fn mean_image(&self) -> Array1<T> {
        self.images.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.shape.len()))
    }

    /// Seeded shuffled batches over the whole split; the last batch may be
    /// short.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Result<impl Iterator<Item = Batch<T>> + '_> {
        let order = batch_indices(self.len(), batch_size, seed)?;
        Ok(order.into_iter().map(move |idx| self.gather(&idx)))
    }
}

/// A mini-batch: images as rows plus their labels.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub images: Array2<T>,
    pub labels: Vec<usize>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Seeded permutation of `0..len` cut into chunks of `batch_size`.
pub fn batch_indices(len: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Reads a split from `root`, scaling pixels to `[0, 1]`.
///
/// MNIST is looked up as IDX files in `root/mnist/` (or `root/`); CIFAR-10 as
/// the binary batches in `root/cifar10/cifar-10-batches-bin/`,
/// `root/cifar-10-batches-bin/` or `root/cifar10/`.
pub fn load_dataset<T: Scalar>(spec: DatasetSpec, root: &Path) -> Result<Dataset<T>> {
    match spec.name {
        DatasetName::Mnist => load_mnist(spec, root),
        DatasetName::Cifar10 => load_cifar10(spec, root),
    }
}

fn find_file(candidates: &[PathBuf]) -> Result<PathBuf> {
    candidates.iter().find(|p| p.is_file()).cloned().ok_or_else(|| Error::Load {
        path: candidates[0].clone(),
        reason: "file not found".into(),
    })
}

fn read_be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn load_mnist<T: Scalar>(spec: DatasetSpec, root: &Path) -> Result<Dataset<T>> {
    let prefix = match spec.split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let locate = |name: String| find_file(&[root.join("mnist").join(&name), root.join(&name)]);
    let img_path = locate(format!("{prefix}-images-idx3-ubyte"))?;
    let lbl_path = locate(format!("{prefix}-labels-idx1-ubyte"))?;
    let corrupt = |path: &Path, reason: &str| Error::Load { path: path.to_path_buf(), reason: reason.to_string() };

    let img = fs::read(&img_path).map_err(|e| corrupt(&img_path, &e.to_string()))?;
    if img.len() < 16 || read_be_u32(&img, 0) != 0x0803 {
        return Err(corrupt(&img_path, "bad IDX image header"));
    }
    let (n, rows, cols) =
        (read_be_u32(&img, 4) as usize, read_be_u32(&img, 8) as usize, read_be_u32(&img, 12) as usize);
    let shape = spec.image_shape();
    if rows != shape.height || cols != shape.width || img.len() != 16 + n * rows * cols {
        return Err(corrupt(&img_path, "unexpected IDX image dimensions"));
    }

    let lbl = fs::read(&lbl_path).map_err(|e| corrupt(&lbl_path, &e.to_string()))?;
    if lbl.len() < 8 || read_be_u32(&lbl, 0) != 0x0801 || read_be_u32(&lbl, 4) as usize != n || lbl.len() != 8 + n {
        return Err(corrupt(&lbl_path, "bad IDX label file"));
    }
    let labels: Vec<usize> = lbl[8..].iter().map(|&b| b as usize).collect();
    if labels.iter().any(|&l| l >= spec.num_classes()) {
        return Err(corrupt(&lbl_path, "label outside 0..10"));
    }

    let scale = T::of(1.0 / 255.0);
    let images = Array2::from_shape_vec((n, rows * cols), img[16..].iter().map(|&b| T::of(b as f64) * scale).collect())
        .map_err(|e| corrupt(&img_path, &e.to_string()))?;
    Dataset::new(shape, spec.num_classes(), images, labels)
}

fn load_cifar10<T: Scalar>(spec: DatasetSpec, root: &Path) -> Result<Dataset<T>> {
    let names: Vec<String> = match spec.split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    };
    let shape = spec.image_shape();
    let record = 1 + shape.len();
    let scale = T::of(1.0 / 255.0);
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let path = find_file(&[
            root.join("cifar10").join("cifar-10-batches-bin").join(&name),
            root.join("cifar-10-batches-bin").join(&name),
            root.join("cifar10").join(&name),
        ])?;
        let bytes = fs::read(&path).map_err(|e| Error::Load { path: path.clone(), reason: e.to_string() })?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Load { path, reason: format!("size is not a multiple of the {record}-byte record") });
        }
        for rec in bytes.chunks_exact(record) {
            if rec[0] as usize >= spec.num_classes() {
                return Err(Error::Load { path, reason: format!("label {} outside 0..10", rec[0]) });
            }
            labels.push(rec[0] as usize);
            pixels.extend(rec[1..].iter().map(|&b| T::of(b as f64) * scale));
        }
    }
    let images = Array2::from_shape_vec((labels.len(), shape.len()), pixels).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(shape, spec.num_classes(), images, labels)
}

/// Surjective relabelling from original class ids onto a contiguous pooled
/// range.
///
/// `catch_all` marks a pooled "dummy" class that absorbs classes of no
/// interest; it is exempt from the hierarchical nesting check.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolingMap {
    mapping: Vec<usize>,
    pooled_num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    catch_all: Option<usize>,
}

impl PoolingMap {
    pub fn identity(num_classes: usize) -> Self {
        Self { mapping: (0..num_classes).collect(), pooled_num_classes: num_classes, catch_all: None }
    }

    pub fn new(mapping: Vec<usize>, catch_all: Option<usize>) -> Result<Self> {
        let pooled = mapping.iter().max().map_or(0, |&m| m + 1);
        let mut hit = vec![false; pooled];
        for &m in &mapping {
            hit[m] = true;
        }
        if let Some(gap) = hit.iter().position(|&h| !h) {
            return Err(Error::Config(format!("pooled ids are not contiguous: {gap} is never produced")));
        }
        if let Some(c) = catch_all {
            if c >= pooled {
                return Err(Error::Config(format!("catch-all class {c} outside [0, {pooled})")));
            }
        }
        Ok(Self { mapping, pooled_num_classes: pooled, catch_all })
    }

    /// Keeps classes `0..keep` and pools `keep..num_classes` into one dummy
    /// class with id `keep`.
    pub fn pool_tail(num_classes: usize, keep: usize) -> Result<Self> {
        if keep == 0 || keep >= num_classes {
            return Err(Error::Config(format!("cannot keep {keep} of {num_classes} classes")));
        }
        Self::new((0..num_classes).map(|c| c.min(keep)).collect(), Some(keep))
    }

    pub fn num_original(&self) -> usize {
        self.mapping.len()
    }

    pub fn pooled_num_classes(&self) -> usize {
        self.pooled_num_classes
    }

    pub fn catch_all(&self) -> Option<usize> {
        self.catch_all
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Original classes pooled into `pooled`.
    pub fn preimage(&self, pooled: usize) -> Vec<usize> {
        (0..self.mapping.len()).filter(|&c| self.mapping[c] == pooled).collect()
    }
}

pub fn apply_pooling(label: usize, map: &PoolingMap) -> Result<usize> {
    map.mapping
        .get(label)
        .copied()
        .ok_or_else(|| Error::Domain(format!("label {label} outside pooling domain [0, {})", map.mapping.len())))
}

pub fn one_hot<T: Scalar>(label: usize, n: usize) -> Result<Array1<T>> {
    if label >= n {
        return Err(Error::Domain(format!("label {label} outside [0, {n})")));
    }
    let mut v = Array1::zeros(n);
    v[label] = T::one();
    Ok(v)
}

/// Pixel range of a single image, `(min, max)`.
pub fn pixel_range<T: Scalar>(pixels: ArrayView1<'_, T>) -> (T, T) {
    pixels.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &p| (lo.min(p), hi.max(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pooling_examples() {
        let id = PoolingMap::identity(10);
        assert_eq!(apply_pooling(7, &id).unwrap(), 7);
        let b3 = PoolingMap::pool_tail(10, 5).unwrap();
        assert_eq!(b3.pooled_num_classes(), 6);
        assert_eq!(apply_pooling(8, &b3).unwrap(), 5);
        assert_eq!(apply_pooling(3, &b3).unwrap(), 3);
        assert!(matches!(apply_pooling(10, &b3), Err(Error::Domain(_))));
        assert_eq!(b3.preimage(5), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn pooling_rejects_gaps() {
        assert!(PoolingMap::new(vec![0, 2, 2], None).is_err());
        assert!(PoolingMap::new(vec![0, 1, 1], Some(2)).is_err());
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot::<f64>(0, 3).unwrap().to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot::<f64>(2, 3).unwrap().to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(one_hot::<f64>(3, 3).is_err());
    }

    #[test]
    fn batch_partition_sizes() {
        let b = batch_indices(10, 4, 7).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batch_indices(10, 4, 7).unwrap());
        assert!(batch_indices(0, 4, 7).unwrap().is_empty());
        assert!(batch_indices(3, 0, 7).is_err());
    }

    #[test]
    fn seeds_give_different_permutations() {
        let a = batch_indices(10_000, 10_000, 1).unwrap();
        let b = batch_indices(10_000, 10_000, 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn dataset_rejects_out_of_range_pixels() {
        let imgs = Array2::from_elem((1, 4), 1.5f32);
        assert!(Dataset::new(ImageShape::new(1, 2, 2), 2, imgs, vec![0]).is_err());
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset::<f32>(DatasetSpec::new(DatasetName::Mnist, Split::Test), dir.path()).unwrap_err();
        assert!(err.to_string().contains("t10k-images-idx3-ubyte"), "{err}");
        assert!("svhn".parse::<DatasetName>().is_err());
    }

    #[test]
    fn reads_synthetic_idx_and_cifar_files() {
        let dir = tempfile::tempdir().unwrap();
        let n = 3usize;
        let mut img = Vec::new();
        for v in [0x0803u32, n as u32, 28, 28] {
            img.extend(v.to_be_bytes());
        }
        img.extend((0..n * 784).map(|i| (i % 256) as u8));
        let mut lbl = Vec::new();
        for v in [0x0801u32, n as u32] {
            lbl.extend(v.to_be_bytes());
        }
        lbl.extend([3u8, 0, 9]);
        fs::create_dir_all(dir.path().join("mnist")).unwrap();
        fs::write(dir.path().join("mnist/t10k-images-idx3-ubyte"), &img).unwrap();
        fs::write(dir.path().join("mnist/t10k-labels-idx1-ubyte"), &lbl).unwrap();
        let ds = load_dataset::<f32>(DatasetSpec::new(DatasetName::Mnist, Split::Test), dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels(), &[3, 0, 9]);
        assert_eq!(ds.images()[[0, 255]], 1.0);

        let cifar = dir.path().join("cifar10");
        fs::create_dir_all(&cifar).unwrap();
        let mut rec = vec![4u8];
        rec.extend(std::iter::repeat(51u8).take(3072));
        rec.extend(rec.clone());
        fs::write(cifar.join("test_batch.bin"), &rec).unwrap();
        let ds = load_dataset::<f64>(DatasetSpec::new(DatasetName::Cifar10, Split::Test), dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), ImageShape::new(3, 32, 32));
        assert!((ds.images()[[1, 100]] - 0.2).abs() < 1e-12);

        fs::write(cifar.join("test_batch.bin"), [1u8, 2, 3]).unwrap();
        assert!(matches!(
            load_dataset::<f64>(DatasetSpec::new(DatasetName::Cifar10, Split::Test), dir.path()),
            Err(Error::Load { .. })
        ));
    }

    proptest! {
        #[test]
        fn pooling_preserves_counts(labels in proptest::collection::vec(0usize..10, 0..200)) {
            let map = PoolingMap::pool_tail(10, 5).unwrap();
            let mut counts = vec![0usize; map.pooled_num_classes()];
            for &l in &labels {
                counts[apply_pooling(l, &map).unwrap()] += 1;
            }
            prop_assert_eq!(counts.iter().sum::<usize>(), labels.len());
        }

        #[test]
        fn one_hot_selects(label in 0usize..8, v in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let h = one_hot::<f64>(label, 8).unwrap();
            prop_assert_eq!(h.dot(&Array1::from(v.clone())), v[label]);
            prop_assert_eq!(h.sum(), 1.0);
        }

        #[test]
        fn epoch_covers_dataset(len in 0usize..300, bs in 1usize..40, seed in any::<u64>()) {
            let mut all: Vec<usize> = batch_indices(len, bs, seed).unwrap().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }
    }
}
