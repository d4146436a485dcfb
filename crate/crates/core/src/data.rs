//! Dataset ingestion, imbalanced subsampling, repetition oversampling and batching.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use lpgan_autodiff::Tensor;
use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, Normal};

use crate::rng::{self, streams};
use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Training counts for imbalanced MNIST and Fashion-MNIST (IR 100).
pub const TABLE_MNIST_COUNTS: [usize; 10] = [4000, 2000, 1000, 750, 500, 350, 200, 100, 60, 40];

/// Images `[n, h, w, channels]` in `[0, 1]` with labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledImageSet {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Dataset(format!(
                "images must be [n, h, w, c], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::Consistency {
                images: images.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Domain {
                label,
                classes: num_classes,
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Dataset("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(h, w, channels)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn image_len(&self) -> usize {
        let (h, w, c) = self.image_shape();
        h * w * c
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Positions of each class, in ascending order.
    pub fn class_positions(&self) -> Vec<Vec<usize>> {
        let mut pos = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            pos[l].push(i);
        }
        pos
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let word = bytes.get(at..at + 4).ok_or_else(|| Error::Length {
        path: path.to_path_buf(),
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(header..header + len).ok_or_else(|| Error::Length {
        path: path.to_path_buf(),
        expected: header + len,
        found: bytes.len(),
    })
}

/// Parse an IDX image file: `(count, rows, cols, pixel bytes)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = payload(bytes, 16, n * rows * cols, path)?;
    Ok((n, rows, cols, pixels.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, n, path)?.to_vec())
}

/// Load an IDX image/label pair, gzip-compressed or not.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gzip(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_maybe_gzip(labels_path)?, labels_path)?;
    if labels.len() != n {
        return Err(Error::Consistency {
            images: n,
            labels: labels.len(),
        });
    }
    let data = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    let images = Tensor::from_vec(&[n, rows, cols, 1], data)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledImageSet::new(images, labels, num_classes)
}

/// Serialize as an IDX pair (single-channel images only).
pub fn write_idx(set: &LabeledImageSet, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (h, w, c) = set.image_shape();
    if c != 1 {
        return Err(Error::Dataset("IDX export supports single-channel images".into()));
    }
    let mut img = Vec::with_capacity(16 + set.images.numel());
    for word in [IDX_IMAGES_MAGIC, set.len() as u32, h as u32, w as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(set.images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + set.len());
    for word in [IDX_LABELS_MAGIC, set.len() as u32] {
        lab.extend_from_slice(&word.to_be_bytes());
    }
    lab.extend(set.labels.iter().map(|&l| l as u8));
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))
}

/// A class-imbalanced training set drawn from a larger labelled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ImbalancedDataset {
    pub base: LabeledImageSet,
    pub per_class_counts: Vec<usize>,
    pub seed: u64,
    /// Position in the source pool of each sample of `base`.
    pub source_indices: Vec<usize>,
}

impl ImbalancedDataset {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    /// `max(p) / min(p)`.
    pub fn imbalance_ratio(&self) -> f64 {
        imbalance_ratio(&self.per_class_counts)
    }

    /// Largest training class (lowest index on ties).
    pub fn majority_class(&self) -> usize {
        majority_class(&self.per_class_counts)
    }

    /// Smallest training class (highest index on ties).
    pub fn minority_class(&self) -> usize {
        minority_class(&self.per_class_counts)
    }
}

pub fn imbalance_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    max as f64 / min as f64
}

pub fn majority_class(counts: &[usize]) -> usize {
    let max = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == max).unwrap_or(0)
}

pub fn minority_class(counts: &[usize]) -> usize {
    let min = counts.iter().copied().min().unwrap_or(0);
    counts.iter().rposition(|&c| c == min).unwrap_or(0)
}

/// Draw exactly `per_class_counts[c]` samples of each class without replacement.
pub fn make_imbalanced(src: &LabeledImageSet, per_class_counts: &[usize], seed: u64) -> Result<ImbalancedDataset> {
    if per_class_counts.len() != src.num_classes() {
        return Err(Error::Dataset(format!(
            "{} class counts given for {} classes",
            per_class_counts.len(),
            src.num_classes()
        )));
    }
    if let Some(class) = per_class_counts.iter().position(|&c| c == 0) {
        return Err(Error::Dataset(format!("class {class} has a zero count")));
    }
    let mut rng = rng::stream(seed, streams::SUBSAMPLE);
    let mut chosen = Vec::with_capacity(per_class_counts.iter().sum());
    for (class, (positions, &want)) in src.class_positions().iter().zip(per_class_counts).enumerate() {
        if want > positions.len() {
            return Err(Error::Capacity {
                class,
                requested: want,
                available: positions.len(),
            });
        }
        let picked = index::sample(&mut rng, positions.len(), want);
        chosen.extend(picked.iter().map(|i| positions[i]));
    }
    chosen.shuffle(&mut rng::stream(seed, streams::SHUFFLE));
    Ok(ImbalancedDataset {
        base: src.subset(&chosen),
        per_class_counts: per_class_counts.to_vec(),
        seed,
        source_indices: chosen,
    })
}

/// `per_class` samples of each class from the pool positions not used by `train`.
pub fn holdout_split(
    src: &LabeledImageSet,
    train: &ImbalancedDataset,
    per_class: usize,
    seed: u64,
) -> Result<LabeledImageSet> {
    let mut used = vec![false; src.len()];
    for &i in &train.source_indices {
        used[i] = true;
    }
    let mut rng = rng::stream(seed, streams::HOLDOUT);
    let mut chosen = Vec::new();
    for (class, positions) in src.class_positions().iter().enumerate() {
        let free: Vec<usize> = positions.iter().copied().filter(|&i| !used[i]).collect();
        if free.len() < per_class {
            return Err(Error::Capacity {
                class,
                requested: per_class,
                available: free.len(),
            });
        }
        chosen.extend(index::sample(&mut rng, free.len(), per_class).iter().map(|i| free[i]));
    }
    chosen.sort_unstable();
    Ok(src.subset(&chosen))
}

/// Repetition-oversampled, class-balanced index view over an [`ImbalancedDataset`].
#[derive(Debug, Clone)]
pub struct BalancedView<'a> {
    pub source: &'a ImbalancedDataset,
    pub indices: Vec<usize>,
}

impl BalancedView<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.source.num_classes()];
        for &i in &self.indices {
            counts[self.source.base.labels()[i]] += 1;
        }
        counts
    }
}

/// Repeat every class up to the majority count: full cycles over the class,
/// then a remainder drawn without replacement.
pub fn make_balanced_by_repetition(src: &ImbalancedDataset, seed: u64) -> Result<BalancedView<'_>> {
    if src.is_empty() {
        return Err(Error::Dataset("cannot balance an empty dataset".into()));
    }
    let positions = src.base.class_positions();
    let target = positions.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = rng::stream(seed, streams::BALANCE);
    let mut indices = Vec::with_capacity(target * positions.len());
    for class_pos in positions.iter().filter(|p| !p.is_empty()) {
        let p = class_pos.len();
        for _ in 0..target / p {
            indices.extend_from_slice(class_pos);
        }
        let extra = index::sample(&mut rng, p, target % p);
        indices.extend(extra.iter().map(|i| class_pos[i]));
    }
    Ok(BalancedView { source: src, indices })
}

/// Anything that can be batched: indexed images with labels.
pub trait Samples: Sync {
    fn len(&self) -> usize;
    fn image_shape(&self) -> (usize, usize, usize);
    fn image(&self, i: usize) -> &[f32];
    fn label(&self, i: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Samples for LabeledImageSet {
    fn len(&self) -> usize {
        LabeledImageSet::len(self)
    }
    fn image_shape(&self) -> (usize, usize, usize) {
        LabeledImageSet::image_shape(self)
    }
    fn image(&self, i: usize) -> &[f32] {
        LabeledImageSet::image(self, i)
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

impl Samples for ImbalancedDataset {
    fn len(&self) -> usize {
        self.base.len()
    }
    fn image_shape(&self) -> (usize, usize, usize) {
        self.base.image_shape()
    }
    fn image(&self, i: usize) -> &[f32] {
        self.base.image(i)
    }
    fn label(&self, i: usize) -> usize {
        self.base.labels[i]
    }
}

impl Samples for BalancedView<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn image_shape(&self) -> (usize, usize, usize) {
        self.source.base.image_shape()
    }
    fn image(&self, i: usize) -> &[f32] {
        self.source.base.image(self.indices[i])
    }
    fn label(&self, i: usize) -> usize {
        self.source.base.labels[self.indices[i]]
    }
}

/// A mini-batch: images `[b, h, w, c]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

pub fn gather<S: Samples + ?Sized>(view: &S, positions: &[usize]) -> Batch {
    let (h, w, c) = view.image_shape();
    let mut data = Vec::with_capacity(positions.len() * h * w * c);
    for &i in positions {
        data.extend_from_slice(view.image(i));
    }
    Batch {
        images: Tensor::from_vec(&[positions.len(), h, w, c], data).expect("gathered batch"),
        labels: positions.iter().map(|&i| view.label(i)).collect(),
    }
}

/// Iterator over seeded mini-batches of a view.
pub struct Batches<'a, S: ?Sized> {
    view: &'a S,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<S: Samples + ?Sized> Iterator for Batches<'_, S> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = gather(self.view, &self.order[self.cursor..end]);
        self.cursor = end;
        Some(batch)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.cursor).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl<S: Samples + ?Sized> ExactSizeIterator for Batches<'_, S> {}

/// Batches over a permutation keyed by `(seed, epoch)`; the last partial batch is kept.
pub fn batch_iter<S: Samples + ?Sized>(view: &S, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_, S> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.shuffle(&mut rng::stream(seed, streams::BATCH_BASE + epoch));
    Batches {
        view,
        order,
        batch_size,
        cursor: 0,
    }
}

/// Images of isotropic Gaussian bumps whose centres cluster per class.
///
/// Class centres sit on a circle around the image centre; each sample jitters
/// its centre and adds pixel noise. `counts[c]` samples of class `c`.
pub fn synthetic_blobs(counts: &[usize], side: usize, seed: u64) -> LabeledImageSet {
    let classes = counts.len();
    let mut rng = rng::stream(seed, streams::SYNTHETIC);
    let jitter = Normal::new(0.0, 0.6).expect("valid normal");
    let noise = Normal::new(0.0, 0.05).expect("valid normal");
    let mid = (side as f64 - 1.0) / 2.0;
    let radius = side as f64 / 4.0;
    let width = side as f64 / 6.0;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (class, &n) in counts.iter().enumerate() {
        let angle = std::f64::consts::TAU * class as f64 / classes as f64 + std::f64::consts::FRAC_PI_4;
        let (cy, cx) = (mid + radius * angle.sin(), mid + radius * angle.cos());
        for _ in 0..n {
            let (y0, x0) = (cy + jitter.sample(&mut rng), cx + jitter.sample(&mut rng));
            for i in 0..side {
                for j in 0..side {
                    let d2 = (i as f64 - y0).powi(2) + (j as f64 - x0).powi(2);
                    let v = (-d2 / (2.0 * width * width)).exp() + noise.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
            labels.push(class);
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n = labels.len();
    let set = LabeledImageSet::new(
        Tensor::from_vec(&[n, side, side, 1], data).expect("synthetic images"),
        labels,
        classes,
    )
    .expect("synthetic set is valid");
    set.subset(&order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(words: &[u32]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_be_bytes()).collect()
    }

    fn tiny_pool(per_class: &[usize]) -> LabeledImageSet {
        let n: usize = per_class.iter().sum();
        let mut labels = Vec::new();
        for (c, &k) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(k));
        }
        let data = (0..n).map(|i| (i % 256) as f32 / 255.0).collect();
        LabeledImageSet::new(Tensor::from_vec(&[n, 1, 1, 1], data).unwrap(), labels, per_class.len()).unwrap()
    }

    #[test]
    fn idx_header_decode() {
        let mut bytes = header(&[IDX_IMAGES_MAGIC, 2, 2, 2]);
        bytes.extend([0, 255, 10, 20, 30, 40, 50, 60]);
        let (n, r, c, px) = parse_idx_images(&bytes, Path::new("mem")).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px.len(), 8);
    }

    #[test]
    fn idx_wrong_magic_names_expected() {
        let bytes = header(&[IDX_LABELS_MAGIC, 0, 0, 0]);
        let err = parse_idx_images(&bytes, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format { expected: IDX_IMAGES_MAGIC, .. }));
        assert!(err.to_string().contains("0x00000803"));
    }

    #[test]
    fn idx_truncated_payload() {
        let mut bytes = header(&[IDX_IMAGES_MAGIC, 2, 2, 2]);
        bytes.extend([1, 2, 3]);
        assert!(matches!(
            parse_idx_images(&bytes, Path::new("mem")),
            Err(Error::Length { expected: 24, found: 19, .. })
        ));
    }

    #[test]
    fn imbalance_ratio_uniform_is_one() {
        assert_eq!(imbalance_ratio(&[7, 7, 7]), 1.0);
        assert_eq!(imbalance_ratio(&TABLE_MNIST_COUNTS), 100.0);
    }

    #[test]
    fn capacity_error_names_class() {
        let pool = tiny_pool(&[5, 2]);
        let err = make_imbalanced(&pool, &[3, 3], 0).unwrap_err();
        assert!(matches!(err, Error::Capacity { class: 1, requested: 3, available: 2 }));
    }

    #[test]
    fn imbalanced_is_deterministic() {
        let pool = tiny_pool(&[20, 20, 20]);
        let a = make_imbalanced(&pool, &[10, 5, 2], 42).unwrap();
        let b = make_imbalanced(&pool, &[10, 5, 2], 42).unwrap();
        assert_eq!(a.source_indices, b.source_indices);
        assert_eq!(a.base.class_counts(), vec![10, 5, 2]);
        let c = make_imbalanced(&pool, &[10, 5, 2], 43).unwrap();
        assert_ne!(a.source_indices, c.source_indices);
    }

    #[test]
    fn balanced_identity_case() {
        let pool = tiny_pool(&[4, 4]);
        let ds = make_imbalanced(&pool, &[4, 4], 1).unwrap();
        let view = make_balanced_by_repetition(&ds, 9).unwrap();
        let mut idx = view.indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn holdout_disjoint_from_training() {
        let pool = tiny_pool(&[10, 10]);
        let ds = make_imbalanced(&pool, &[6, 2], 3).unwrap();
        let held = holdout_split(&pool, &ds, 3, 3).unwrap();
        assert_eq!(held.class_counts(), vec![3, 3]);
        assert!(holdout_split(&pool, &ds, 5, 3).is_err());
    }

    #[test]
    fn batch_partition_sizes() {
        let pool = tiny_pool(&[6, 4]);
        let sizes: Vec<usize> = batch_iter(&pool, 4, 0, 0).map(|b| b.labels.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let a: Vec<_> = batch_iter(&pool, 4, 5, 2).collect();
        let b: Vec<_> = batch_iter(&pool, 4, 5, 2).collect();
        assert_eq!(a, b);
        let c: Vec<_> = batch_iter(&pool, 4, 5, 3).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_blobs_counts_and_range() {
        let set = synthetic_blobs(&[30, 3], 8, 1);
        assert_eq!(set.class_counts(), vec![30, 3]);
        assert_eq!(set.image_shape(), (8, 8, 1));
        assert!(set.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
