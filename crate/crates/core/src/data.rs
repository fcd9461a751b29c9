//! MNIST ingestion from IDX files and reproducible batch scheduling.
//!
//! Both nodes derive their schedule from the same `(seed, epoch)` pair, so
//! they see identical images in identical order.

use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::config::{hex_digest, ExperimentConfig};
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const MNIST_TRAIN: usize = 60_000;
pub const MNIST_TEST: usize = 10_000;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// A set of 8-bit grayscale images; pixels map to `byte / 255`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pixels: Vec<u8>,
    count: usize,
    rows: usize,
    cols: usize,
}

impl ImageSet {
    pub fn new(pixels: Vec<u8>, count: usize, rows: usize, cols: usize) -> Result<Self> {
        if pixels.len() != count * rows * cols {
            return Err(Error::Contract(format!(
                "{} pixels cannot form {count} images of {rows}x{cols}",
                pixels.len()
            )));
        }
        Ok(ImageSet { pixels, count, rows, cols })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn raw(&self, index: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[index * n..(index + 1) * n]
    }

    /// First `n` images (all of them when `n` is 0 or too large).
    pub fn truncated(&self, n: usize) -> ImageSet {
        let n = if n == 0 { self.count } else { n.min(self.count) };
        ImageSet {
            pixels: self.pixels[..n * self.rows * self.cols].to_vec(),
            count: n,
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> ImageBatch<T> {
        let n = self.rows * self.cols;
        let inv = T::one() / T::of(255.0);
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend(self.raw(i).iter().map(|&b| T::of(b as f64) * inv));
        }
        ImageBatch(Tensor::from_vec(&[indices.len(), 1, self.rows, self.cols], data))
    }

    pub fn range<T: Scalar>(&self, start: usize, end: usize) -> ImageBatch<T> {
        self.batch(&(start..end).collect::<Vec<_>>())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: ImageSet,
    pub test: ImageSet,
    /// SHA-256 over the source files, hex encoded.
    pub checksum: String,
}

/// Batch of grayscale images `[batch, 1, height, width]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch<T>(Tensor<T>);

impl<T: Scalar> ImageBatch<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().len() != 4 {
            return Err(Error::Contract(format!("image batch needs 4 axes, got {:?}", tensor.shape())));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImageBatch(tensor))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels_per_image(&self) -> usize {
        self.0.len() / self.len().max(1)
    }

    pub fn image(&self, i: usize) -> &[T] {
        self.0.item(i)
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

/// Parse an IDX3 unsigned-byte image file.
pub fn parse_idx_images(bytes: &[u8], file: &Path) -> Result<ImageSet> {
    let err = |message: String| Error::Ingest { file: file.to_path_buf(), message };
    let magic = read_u32(bytes, 0).ok_or_else(|| err("truncated header".into()))?;
    if magic != IMAGE_MAGIC {
        return Err(err(format!("bad magic number {magic}, expected {IMAGE_MAGIC}")));
    }
    let (count, rows, cols) = match (read_u32(bytes, 4), read_u32(bytes, 8), read_u32(bytes, 12)) {
        (Some(c), Some(r), Some(k)) => (c as usize, r as usize, k as usize),
        _ => return Err(err("truncated header".into())),
    };
    let expected = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(err(format!("truncated: {} pixel bytes, header promises {expected}", body.len())));
    }
    if body.len() > expected {
        return Err(err(format!("size mismatch: {} trailing bytes", body.len() - expected)));
    }
    ImageSet::new(body.to_vec(), count, rows, cols)
}

/// Validate an IDX1 label file and return its item count.
pub fn parse_idx_labels(bytes: &[u8], file: &Path) -> Result<usize> {
    let err = |message: String| Error::Ingest { file: file.to_path_buf(), message };
    let magic = read_u32(bytes, 0).ok_or_else(|| err("truncated header".into()))?;
    if magic != LABEL_MAGIC {
        return Err(err(format!("bad magic number {magic}, expected {LABEL_MAGIC}")));
    }
    let count = read_u32(bytes, 4).ok_or_else(|| err("truncated header".into()))? as usize;
    if bytes.len() - 8 != count {
        return Err(err(format!("size mismatch: {} label bytes, header promises {count}", bytes.len() - 8)));
    }
    Ok(count)
}

/// Load the four IDX files from `dir` without enforcing the canonical sizes.
pub fn load_idx_dir(dir: &Path) -> Result<Dataset> {
    let mut hasher = Sha256::new();
    let mut read = |name: &str| -> Result<(Vec<u8>, std::path::PathBuf)> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::Ingest { file: path.clone(), message: e.to_string() })?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
        Ok((bytes, path))
    };
    let (train_bytes, train_path) = read(TRAIN_IMAGES)?;
    let (train_label_bytes, train_label_path) = read(TRAIN_LABELS)?;
    let (test_bytes, test_path) = read(TEST_IMAGES)?;
    let (test_label_bytes, test_label_path) = read(TEST_LABELS)?;

    let train = parse_idx_images(&train_bytes, &train_path)?;
    let test = parse_idx_images(&test_bytes, &test_path)?;
    for (labels, path, images) in [
        (&train_label_bytes, &train_label_path, &train),
        (&test_label_bytes, &test_label_path, &test),
    ] {
        let n = parse_idx_labels(labels, path)?;
        if n != images.len() {
            return Err(Error::Ingest {
                file: path.clone(),
                message: format!("size mismatch: {n} labels for {} images", images.len()),
            });
        }
    }
    Ok(Dataset { train, test, checksum: hex_digest(hasher.finalize().as_slice()) })
}

/// Load MNIST and insist on the canonical 60000/10000 split of 28x28 images.
pub fn ingest_mnist(dir: &Path) -> Result<Dataset> {
    let ds = load_idx_dir(dir)?;
    for (set, name, want) in [(&ds.train, TRAIN_IMAGES, MNIST_TRAIN), (&ds.test, TEST_IMAGES, MNIST_TEST)] {
        if set.len() != want || set.rows() != 28 || set.cols() != 28 {
            return Err(Error::Ingest {
                file: dir.join(name),
                message: format!(
                    "size mismatch: {} images of {}x{}, expected {want} of 28x28",
                    set.len(),
                    set.rows(),
                    set.cols()
                ),
            });
        }
    }
    Ok(ds)
}

/// Encode images as an IDX3 file (used for fixtures and exports).
pub fn encode_idx_images(set: &ImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + set.pixels.len());
    for v in [IMAGE_MAGIC, set.count as u32, set.rows as u32, set.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&set.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Write a complete four-file IDX directory.
pub fn write_idx_dir(dir: &Path, train: &ImageSet, test: &ImageSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (TRAIN_IMAGES, encode_idx_images(train)),
        (TRAIN_LABELS, encode_idx_labels(&vec![0; train.len()])),
        (TEST_IMAGES, encode_idx_images(test)),
        (TEST_LABELS, encode_idx_labels(&vec![0; test.len()])),
    ];
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// One epoch's batch order: a permutation of the training indices cut into
/// full batches (the remainder is dropped).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchSchedule {
    order: Vec<usize>,
    batch_size: usize,
}

impl BatchSchedule {
    /// Permutation of `0..n_images` that depends only on `(seed, epoch)`.
    pub fn new(n_images: usize, batch_size: usize, seed: u64, epoch: u64) -> Self {
        assert!(batch_size >= 1, "batch size must be positive");
        let mut order: Vec<usize> = (0..n_images).collect();
        order.shuffle(&mut stream(seed, Purpose::Shuffle, epoch));
        BatchSchedule { order, batch_size }
    }

    pub fn len(&self) -> usize {
        self.order.len() / self.batch_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self, batch: usize) -> &[usize] {
        &self.order[batch * self.batch_size..(batch + 1) * self.batch_size]
    }

    pub fn batch<T: Scalar>(&self, batch: usize, images: &ImageSet) -> ImageBatch<T> {
        images.batch(self.indices(batch))
    }

    pub fn iter<'a, T: Scalar>(&'a self, images: &'a ImageSet) -> impl Iterator<Item = ImageBatch<T>> + 'a {
        (0..self.len()).map(move |b| self.batch(b, images))
    }
}

/// The training batch sequence of one epoch.
pub fn batch_stream<'a, T: Scalar>(
    dataset: &'a Dataset,
    cfg: &ExperimentConfig,
    epoch: u64,
) -> (BatchSchedule, impl Iterator<Item = ImageBatch<T>> + 'a) {
    let n = if cfg.train_limit == 0 { dataset.train.len() } else { cfg.train_limit.min(dataset.train.len()) };
    let schedule = BatchSchedule::new(n, cfg.batch_size, cfg.seed, epoch);
    let owned = schedule.clone();
    let iter = (0..owned.len()).map(move |b| owned.batch(b, &dataset.train));
    (schedule, iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(count: usize, rows: usize, salt: u8) -> ImageSet {
        let pixels = (0..count * rows * rows).map(|i| (i as u8).wrapping_mul(31).wrapping_add(salt)).collect();
        ImageSet::new(pixels, count, rows, rows).unwrap()
    }

    #[test]
    fn idx_roundtrip_and_rescale_endpoints() {
        let mut set = synthetic(3, 4, 0);
        set.pixels[0] = 255;
        set.pixels[1] = 0;
        let bytes = encode_idx_images(&set);
        let back = parse_idx_images(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, set);
        let b: ImageBatch<f32> = back.batch(&[0]);
        assert_eq!(b.image(0)[0], 1.0);
        assert_eq!(b.image(0)[1], 0.0);
    }

    #[test]
    fn wrong_magic_truncation_and_trailing_bytes_are_errors() {
        let set = synthetic(2, 3, 1);
        let mut bytes = encode_idx_images(&set);
        bytes[3] = 0x01; // 2049
        let e = parse_idx_images(&bytes, Path::new("train-images-idx3-ubyte")).unwrap_err();
        assert!(matches!(&e, Error::Ingest { file, message } if file.ends_with("train-images-idx3-ubyte") && message.contains("magic")));

        let bytes = encode_idx_images(&set);
        assert!(matches!(parse_idx_images(&bytes[..bytes.len() - 1], Path::new("f")), Err(Error::Ingest { .. })));
        assert!(matches!(parse_idx_images(&bytes[..10], Path::new("f")), Err(Error::Ingest { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(parse_idx_images(&long, Path::new("f")), Err(Error::Ingest { .. })));
    }

    #[test]
    fn directory_load_checks_labels_and_canonical_sizes() {
        let dir = tempfile::tempdir().unwrap();
        write_idx_dir(dir.path(), &synthetic(5, 28, 2), &synthetic(2, 28, 3)).unwrap();
        let ds = load_idx_dir(dir.path()).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (5, 2));
        assert_eq!(ds.checksum.len(), 64);
        // not the canonical split
        assert!(matches!(ingest_mnist(dir.path()), Err(Error::Ingest { .. })));

        std::fs::write(dir.path().join(TEST_LABELS), encode_idx_labels(&[0; 3])).unwrap();
        match load_idx_dir(dir.path()) {
            Err(Error::Ingest { file, .. }) => assert!(file.ends_with(TEST_LABELS)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checksum_tracks_content() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_idx_dir(d1.path(), &synthetic(4, 28, 0), &synthetic(2, 28, 0)).unwrap();
        write_idx_dir(d2.path(), &synthetic(4, 28, 1), &synthetic(2, 28, 0)).unwrap();
        let a = load_idx_dir(d1.path()).unwrap();
        assert_eq!(a.checksum, load_idx_dir(d1.path()).unwrap().checksum);
        assert_ne!(a.checksum, load_idx_dir(d2.path()).unwrap().checksum);
    }

    #[test]
    fn schedules_are_deterministic_and_seed_dependent() {
        let a = BatchSchedule::new(60_000, 128, 1, 0);
        assert_eq!(a, BatchSchedule::new(60_000, 128, 1, 0));
        assert_eq!(a.len(), 468);
        let b = BatchSchedule::new(60_000, 128, 2, 0);
        assert_ne!(a.indices(0), b.indices(0));
        let c = BatchSchedule::new(60_000, 128, 1, 1);
        assert_ne!(a.indices(0), c.indices(0));
        // a permutation: every index once
        let mut seen = a.order.clone();
        seen.sort_unstable();
        assert!(seen.iter().enumerate().all(|(i, &v)| i == v));
    }

    #[test]
    fn batch_stream_drops_partial_batch_and_repeats_bitwise() {
        let ds = Dataset { train: synthetic(10, 4, 0), test: synthetic(2, 4, 0), checksum: String::new() };
        let cfg = ExperimentConfig { batch_size: 3, seed: 9, ..ExperimentConfig::default() };
        let (s1, it1) = batch_stream::<f32>(&ds, &cfg, 4);
        let (s2, it2) = batch_stream::<f32>(&ds, &cfg, 4);
        assert_eq!(s1, s2);
        let v1: Vec<_> = it1.collect();
        let v2: Vec<_> = it2.collect();
        assert_eq!(v1.len(), 3);
        assert_eq!(v1, v2);
        assert!(v1.iter().all(|b| b.len() == 3));

        let limited = ExperimentConfig { train_limit: 6, ..cfg };
        let (s3, _) = batch_stream::<f32>(&ds, &limited, 4);
        assert_eq!(s3.len(), 2);
        assert!((0..2).all(|b| s3.indices(b).iter().all(|&i| i < 6)));
    }

    #[test]
    fn image_batch_rejects_out_of_range_pixels() {
        assert!(ImageBatch::new(Tensor::<f32>::full(&[1, 1, 2, 2], 1.5)).is_err());
        assert!(ImageBatch::new(Tensor::<f32>::full(&[1, 1, 2, 2], 0.5)).is_ok());
    }
}
