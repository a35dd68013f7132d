//! Dataset handling: validated in-memory splits, IDX and CIFAR binary
//! loaders, and a seeded Gaussian-blobs generator for fast experiments.
//! Pixels are kept in raw [0,1] — no mean/std standardization — because the
//! attack box constraint lives in that space.

use std::path::Path;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[N, C, H, W]` in [0,1] with integer labels below `classes`.
#[derive(Debug, Clone)]
pub struct DatasetSplit<T: Element> {
    pub name: String,
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// FNV-1a over the pixel bits and labels, for provenance in reports.
    pub checksum: u64,
}

impl<T: Element> DatasetSplit<T> {
    pub fn new(
        name: impl Into<String>,
        images: Tensor<T>,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] == 0 {
            return Err(Error::Dimension(format!(
                "images must be [n, c, h, w] with n >= 1, got {:?}",
                images.shape()
            )));
        }
        if labels.len() != images.shape()[0] {
            return Err(Error::Dimension(format!(
                "{} labels for {} images",
                labels.len(),
                images.shape()[0]
            )));
        }
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Format(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if images
            .data()
            .iter()
            .any(|&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(Error::Format("pixels must lie in [0,1]".into()));
        }
        let checksum = checksum_of(&images, &labels);
        Ok(Self {
            name: name.into(),
            images,
            labels,
            classes,
            checksum,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[c, h, w]`.
    pub fn example_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(rows)?;
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        Self::new(self.name.clone(), images, labels, self.classes)
    }

    /// A deterministic random subset of `n` examples without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::Usage(format!(
                "cannot subsample {n} of {} examples",
                self.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indices: Vec<usize> = (0..self.len()).collect();
        // Partial Fisher-Yates: the first n entries become the sample.
        for i in 0..n {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        indices.truncate(n);
        self.select(&indices)
    }
}

fn checksum_of<T: Element>(images: &Tensor<T>, labels: &[usize]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    };
    let mut scratch = Vec::with_capacity(T::BYTE_WIDTH);
    for &v in images.data() {
        scratch.clear();
        v.append_le(&mut scratch);
        eat(&scratch);
    }
    for &y in labels {
        eat(&(y as u64).to_le_bytes());
    }
    hash
}

// ---------------------------------------------------------------------------
// IDX (big-endian) image/label pair
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated(format!("file ends inside {what}")))
}

/// Loads an IDX image file plus its label file (the ubiquitous handwritten
/// digit distribution format). Pixels are bytes scaled by 1/255.
pub fn load_idx<T: Element>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    classes: usize,
) -> Result<DatasetSplit<T>> {
    let img = std::fs::read(&images_path)?;
    let lab = std::fs::read(&labels_path)?;

    let magic = be_u32(&img, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(&img, 4, "image count")? as usize;
    let rows = be_u32(&img, 8, "row count")? as usize;
    let cols = be_u32(&img, 12, "column count")? as usize;
    let expected = 16 + n * rows * cols;
    if img.len() < expected {
        return Err(Error::Truncated(format!(
            "image file holds {} bytes, header promises {expected}",
            img.len()
        )));
    }
    if img.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after image data",
            img.len() - expected
        )));
    }

    let magic = be_u32(&lab, 0, "label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = be_u32(&lab, 4, "label count")? as usize;
    if n_labels != n {
        return Err(Error::Format(format!(
            "{n_labels} labels for {n} images"
        )));
    }
    if lab.len() != 8 + n {
        return Err(Error::Truncated(format!(
            "label file holds {} bytes, expected {}",
            lab.len(),
            8 + n
        )));
    }

    let scale = 1.0 / 255.0;
    let pixels: Vec<T> = img[16..]
        .iter()
        .map(|&b| T::from_f64(b as f64 * scale))
        .collect();
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let name = images_path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    DatasetSplit::new(name, Tensor::new(vec![n, 1, rows, cols], pixels)?, labels, classes)
}

// ---------------------------------------------------------------------------
// CIFAR binary batches
// ---------------------------------------------------------------------------

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Loads a CIFAR binary batch: records of one label byte followed by 3072
/// channel-major pixel bytes.
pub fn load_cifar<T: Element>(
    path: impl AsRef<Path>,
    classes: usize,
) -> Result<DatasetSplit<T>> {
    let bytes = std::fs::read(&path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "file length {} is not a positive multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let scale = 1.0 / 255.0;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= classes {
            return Err(Error::Format(format!(
                "record {i}: label {label} out of range for {classes} classes"
            )));
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| T::from_f64(b as f64 * scale)));
    }
    let name = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cifar".into());
    DatasetSplit::new(name, Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, classes)
}

// ---------------------------------------------------------------------------
// Gaussian blobs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsConfig {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    /// Per-coordinate spread of the class centers along the main diagonal
    /// of the unit box.
    pub separation: f64,
    /// Per-coordinate standard deviation of each cluster.
    pub sigma: f64,
}

impl BlobsConfig {
    pub fn new(n: usize, classes: usize, dim: usize, seed: u64) -> Self {
        Self {
            n,
            classes,
            dim,
            seed,
            separation: 0.5,
            sigma: 0.04,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::Config(
                "blobs need at least 2 classes and 1 dimension".into(),
            ));
        }
        if self.n < self.classes {
            return Err(Error::Config(format!(
                "{} points cannot cover {} classes",
                self.n, self.classes
            )));
        }
        if !(self.sigma > 0.0) || !(self.separation > 0.0 && self.separation <= 1.0) {
            return Err(Error::Config(format!(
                "sigma must be positive and separation in (0,1], got {} and {}",
                self.sigma, self.separation
            )));
        }
        Ok(())
    }
}

/// Class centers for [`make_blobs`]: per-coordinate sign patterns around the
/// box center, `0.5 ± separation/2`. The patterns depend only on (classes,
/// dim, separation) — never on the sampling seed — so splits drawn with
/// different seeds share one geometry. Patterns are deduplicated so no two
/// classes coincide.
pub fn blob_centers(cfg: &BlobsConfig) -> Vec<Vec<f64>> {
    // Two balanced classes get an exactly antipodal pair (sign sum zero per
    // class), which keeps the mixture mean at the box center.
    let mut signs: Vec<Vec<i8>> = if cfg.classes == 2 && cfg.dim.is_multiple_of(2) {
        let base: Vec<i8> = (0..cfg.dim).map(|d| if d % 2 == 0 { 1 } else { -1 }).collect();
        let flipped = base.iter().map(|&s| -s).collect();
        vec![base, flipped]
    } else {
        (0..cfg.classes)
            .map(|c| {
                (0..cfg.dim)
                    .map(|d| {
                        let bits = crate::attacks::splitmix64(
                            0x426C_6F62u64 ^ ((c as u64) << 32) ^ d as u64,
                        );
                        if bits & 1 == 0 { 1 } else { -1 }
                    })
                    .collect()
            })
            .collect()
    };
    for c in 1..cfg.classes {
        let mut flip = 0;
        while signs[..c].contains(&signs[c]) {
            signs[c][flip % cfg.dim] = -signs[c][flip % cfg.dim];
            flip += 1;
        }
    }
    signs
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|s| 0.5 + 0.5 * cfg.separation * s as f64)
                .collect()
        })
        .collect()
}

/// Seeded Gaussian clusters around sign-pattern centers (see
/// [`blob_centers`]), round-robin (balanced) labels, clamped to [0,1].
/// Images come out as `[n, 1, 1, dim]` so the MLP models take them directly.
pub fn make_blobs<T: Element>(cfg: &BlobsConfig) -> Result<DatasetSplit<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pixels = Vec::with_capacity(cfg.n * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n);
    let centers = blob_centers(cfg);
    let unit = Normal::new(0.0, 1.0).map_err(|e| Error::Config(format!("{e}")))?;
    for i in 0..cfg.n {
        let class = i % cfg.classes;
        labels.push(class);
        for d in 0..cfg.dim {
            let v = (centers[class][d] + cfg.sigma * unit.sample(&mut rng)).clamp(0.0, 1.0);
            pixels.push(T::from_f64(v));
        }
    }
    DatasetSplit::new(
        format!("blobs-n{}-k{}-d{}-s{}", cfg.n, cfg.classes, cfg.dim, cfg.seed),
        Tensor::new(vec![cfg.n, 1, 1, cfg.dim], pixels)?,
        labels,
        cfg.classes,
    )
}

// ---------------------------------------------------------------------------
