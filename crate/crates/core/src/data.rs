//! MNIST loading: IDX container parsing, normalization, batching, and
//! per-class subsets.
//!
//! Pixels are `u8` on disk and normalized by 1/255 into `[0,1]` on load, the
//! range a sigmoid decoder can reproduce. Files may be raw IDX or gzipped
//! (detected by the 2-byte 0x1f8b magic). Shuffling is driven by the explicit
//! seeded [`Rng`], so batch order is a pure function of the seed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use cfx_tensor::{Rng, Tensor};
use flate2::read::GzDecoder;

use crate::error::{CoreError, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

/// Labeled image collection with pixels in `[0,1]`.
#[derive(Clone)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<u8>,
}

/// One half of a dataset as stored on disk.
#[derive(Debug)]
pub enum IdxContent {
    /// `[N, H, W, 1]`, values in `[0,1]`.
    Images(Tensor<f32>),
    Labels(Vec<u8>),
}

fn read_maybe_gzipped(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| CoreError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CoreError::parse(
            path,
            bytes.len() as u64,
            format!("truncated: need {} bytes for a u32 field", end),
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parse one IDX file (raw or gzipped): magic 0x00000803 is a u8 image cube,
/// 0x00000801 a u8 label vector.
pub fn parse_idx(path: &Path) -> Result<IdxContent> {
    let bytes = read_maybe_gzipped(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    match magic {
        0x0000_0803 => {
            let n = be_u32(&bytes, 4, path)? as usize;
            let h = be_u32(&bytes, 8, path)? as usize;
            let w = be_u32(&bytes, 12, path)? as usize;
            let count = n
                .checked_mul(h)
                .and_then(|v| v.checked_mul(w))
                .ok_or_else(|| {
                    CoreError::parse(path, 4, format!("dimension overflow: {n}x{h}x{w}"))
                })?;
            let payload = &bytes[16..];
            if payload.len() != count {
                return Err(CoreError::parse(
                    path,
                    16,
                    format!("expected {count} pixel bytes, found {}", payload.len()),
                ));
            }
            let data: Vec<f32> = payload.iter().map(|&b| b as f32 / 255.0).collect();
            Ok(IdxContent::Images(Tensor::new(vec![n, h, w, 1], data)?))
        }
        0x0000_0801 => {
            let n = be_u32(&bytes, 4, path)? as usize;
            let payload = &bytes[8..];
            if payload.len() != n {
                return Err(CoreError::parse(
                    path,
                    8,
                    format!("expected {n} label bytes, found {}", payload.len()),
                ));
            }
            Ok(IdxContent::Labels(payload.to_vec()))
        }
        other => Err(CoreError::parse(
            path,
            0,
            format!("bad IDX magic 0x{other:08x} (expected 0x00000803 or 0x00000801)"),
        )),
    }
}

/// Serialize images back to the IDX byte layout (inverse of `parse_idx`;
/// round-trips bit-identically because 1/255 normalization is invertible).
pub fn write_idx_images(images: &Tensor<f32>) -> Vec<u8> {
    let s = images.shape();
    let (n, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(16 + n * h * w);
    out.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    out.extend_from_slice(&(n as u32).to_be_bytes());
    out.extend_from_slice(&(h as u32).to_be_bytes());
    out.extend_from_slice(&(w as u32).to_be_bytes());
    out.extend(images.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// One-hot row vector of length `k`.
pub fn one_hot(label: usize, k: usize) -> Result<Tensor<f32>> {
    if label >= k {
        return Err(CoreError::Config(format!(
            "one_hot: label {label} out of range for {k} classes"
        )));
    }
    let mut data = vec![0.0; k];
    data[label] = 1.0;
    Ok(Tensor::new(vec![k], data)?)
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[3] != 1 {
            return Err(CoreError::Config(format!(
                "dataset images must be [N,H,W,1], got {s:?}"
            )));
        }
        if s[0] != labels.len() {
            return Err(CoreError::Config(format!(
                "dataset has {} images but {} labels",
                s[0],
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(CoreError::Config(format!("label {bad} outside 0..=9")));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CoreError::Config(
                "dataset pixels must lie in [0,1]".to_string(),
            ));
        }
        Ok(Dataset { images, labels })
    }

    /// Load an (images, labels) IDX file pair.
    pub fn load(images_path: &Path, labels_path: &Path) -> Result<Self> {
        let images = match parse_idx(images_path)? {
            IdxContent::Images(t) => t,
            IdxContent::Labels(_) => {
                return Err(CoreError::parse(images_path, 0, "expected images, got labels"));
            }
        };
        let labels = match parse_idx(labels_path)? {
            IdxContent::Labels(l) => l,
            IdxContent::Images(_) => {
                return Err(CoreError::parse(labels_path, 0, "expected labels, got images"));
            }
        };
        Dataset::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Pixels of image `i` as a flat slice of length H·W.
    pub fn image(&self, i: usize) -> &[f32] {
        let px = self.images.len() / self.len();
        &self.images.data()[i * px..(i + 1) * px]
    }

    /// Image `i` as a `[1,H,W,1]` tensor (a one-element batch).
    pub fn image_tensor(&self, i: usize) -> Tensor<f32> {
        let s = self.images.shape();
        Tensor::new(vec![1, s[1], s[2], 1], self.image(i).to_vec()).expect("slice of valid data")
    }

    /// New dataset from the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let s = self.images.shape();
        let px = s[1] * s[2];
        let mut data = Vec::with_capacity(indices.len() * px);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            images: Tensor::new(vec![indices.len(), s[1], s[2], 1], data).expect("valid subset"),
            labels,
        }
    }

    /// First `n` instances (deterministic subset used by the desk-scale preset).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let indices: Vec<usize> = (0..n).collect();
        self.select(&indices)
    }

    /// All instances of one class; an absent class is an error.
    pub fn class_subset(&self, class: usize) -> Result<Dataset> {
        if class >= NUM_CLASSES {
            return Err(CoreError::Config(format!("class {class} outside 0..=9")));
        }
        let indices: Vec<usize> = (0..self.len())
            .filter(|&i| self.labels[i] as usize == class)
            .collect();
        if indices.is_empty() {
            return Err(CoreError::Config(format!(
                "class {class} has no instances in this dataset"
            )));
        }
        Ok(self.select(&indices))
    }

    /// One-hot matrix `[N,10]` of all labels.
    pub fn one_hot_labels(&self) -> Tensor<f32> {
        let mut data = vec![0.0f32; self.len() * NUM_CLASSES];
        for (i, &l) in self.labels.iter().enumerate() {
            data[i * NUM_CLASSES + l as usize] = 1.0;
        }
        Tensor::new(vec![self.len(), NUM_CLASSES], data).expect("valid one-hot")
    }
}

/// Mini-batch of images with plain and one-hot labels.
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
    pub one_hot: Tensor<f32>,
}

/// Seeded, optionally shuffled pass over a dataset.
pub struct BatchIterator<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    drop_last: bool,
    cursor: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(
        dataset: &'a Dataset,
        batch_size: usize,
        shuffle_seed: Option<u64>,
        drop_last: bool,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(CoreError::Config("batch size must be positive".to_string()));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        if let Some(seed) = shuffle_seed {
            Rng::from_seed(seed).shuffle(&mut order);
        }
        Ok(BatchIterator {
            dataset,
            order,
            batch_size,
            drop_last,
            cursor: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        if self.drop_last {
            self.order.len() / self.batch_size
        } else {
            self.order.len().div_ceil(self.batch_size)
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let remaining = self.order.len() - self.cursor;
        if remaining == 0 || (self.drop_last && remaining < self.batch_size) {
            return None;
        }
        let take = remaining.min(self.batch_size);
        let idx = &self.order[self.cursor..self.cursor + take];
        self.cursor += take;
        let sub = self.dataset.select(idx);
        Some(Batch {
            one_hot: sub.one_hot_labels(),
            images: sub.images,
            labels: sub.labels,
        })
    }
}

/// Directory holding the four canonical MNIST files: `CFX_MNIST_DIR` if set,
/// else `data/mnist` under the workspace root. The workspace-root form is
/// anchored at compile time so it works regardless of the working directory,
/// and is normalized lexically so the same path prints the same way
/// everywhere it is recorded.
pub fn default_mnist_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("CFX_MNIST_DIR") {
        return PathBuf::from(dir);
    }
    let raw = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let mut out = PathBuf::new();
    for c in raw.components() {
        match c {
            std::path::Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            std::path::Component::CurDir => {}
            other => out.push(other),
        }
    }
    out
}

/// Candidate file names per split half, tried in order (raw, then gzipped).
fn idx_path(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(CoreError::Prerequisite(format!(
        "MNIST file {stem}[.gz] not found under {} (set CFX_MNIST_DIR or place the canonical IDX files there)",
        dir.display()
    )))
}

/// Load the train and test splits from a directory of canonical MNIST files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = Dataset::load(
        &idx_path(dir, "train-images-idx3-ubyte")?,
        &idx_path(dir, "train-labels-idx1-ubyte")?,
    )?;
    let test = Dataset::load(
        &idx_path(dir, "t10k-images-idx3-ubyte")?,
        &idx_path(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    Ok((train, test))
}
