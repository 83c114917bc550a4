//! MNIST (IDX) and CIFAR-10 (binary batches) loaders.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::layer::Rng;
use crate::tensor::{Scalar, Shape, Tensor};

pub const DATA_DIR_ENV: &str = "GHOSTCONV_DATA_DIR";

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "mnist" => Some(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Some(DatasetKind::Cifar10),
            _ => None,
        }
    }

    /// Subdirectory looked up under the data root.
    pub fn subdir(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar-10-batches-bin",
        }
    }

    fn marker(self) -> &'static str {
        match self {
            DatasetKind::Mnist => MNIST_TRAIN_IMAGES,
            DatasetKind::Cifar10 => CIFAR_TRAIN_FILES[0],
        }
    }
}

/// `explicit`, else `$GHOSTCONV_DATA_DIR/<subdir>`, else `$GHOSTCONV_DATA_DIR` itself.
pub fn resolve_data_dir(explicit: Option<&Path>, kind: DatasetKind) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let root = std::env::var_os(DATA_DIR_ENV).ok_or_else(|| {
        Error::config(format!("no dataset directory given and {DATA_DIR_ENV} is not set"))
    })?;
    let root = PathBuf::from(root);
    let sub = root.join(kind.subdir());
    Ok(if sub.join(kind.marker()).exists() { sub } else { root })
}

/// Images with pixels stored per sample as `channels × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

/// Per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Dataset {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        pixels: Vec<f32>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if pixels.len() != labels.len() * channels * height * width {
            return Err(Error::shape(format!(
                "{} pixels for {} labels of {channels}x{height}x{width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label {
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            channels,
            height,
            width,
            pixels,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.item_len();
        &self.pixels[index * n..(index + 1) * n]
    }

    /// The listed samples as one batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::from_f64(v as f64)));
        }
        let shape = Shape::new(indices.len(), self.channels, self.height, self.width);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::from_vec(shape, data)?, labels))
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut pixels = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Dataset {
            pixels,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            channels: self.channels,
            height: self.height,
            width: self.width,
            pixels: Vec::new(),
            labels: Vec::new(),
            num_classes: self.num_classes,
        }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// `n` samples picked by a seeded shuffle, kept in their original order.
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.select(&idx)
    }

    pub fn statistics(&self) -> Normalization {
        let plane = self.height * self.width;
        let mut mean = vec![0.0; self.channels];
        let mut sq = vec![0.0; self.channels];
        for img in self.pixels.chunks(self.item_len()) {
            for (c, p) in img.chunks(plane).enumerate() {
                for &v in p {
                    mean[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                (s / count - *m * *m).max(0.0).sqrt().max(1e-8)
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn normalize(&mut self, stats: &Normalization) {
        let plane = self.height * self.width;
        let item = self.item_len();
        for img in self.pixels.chunks_mut(item) {
            for (c, p) in img.chunks_mut(plane).enumerate() {
                let (m, s) = (stats.mean[c], stats.std[c]);
                p.iter_mut().for_each(|v| *v = ((*v as f64 - m) / s) as f32);
            }
        }
    }
}

/// Train and test splits normalized with the train split's statistics.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub stats: Normalization,
}

impl Split {
    pub fn new(mut train: Dataset, mut test: Option<Dataset>) -> Self {
        let stats = train.statistics();
        train.normalize(&stats);
        if let Some(t) = &mut test {
            t.normalize(&stats);
        }
        Split { train, test, stats }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, offset as u64, "truncated IDX header"))
}

/// Parses an IDX image file into `(count, rows, cols, pixels in [0,1])`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(path, 0, format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: {n} images of {rows}x{cols} need {} bytes", 16 + need),
        ));
    }
    Ok((n, rows, cols, body[..need].iter().map(|&b| b as f32 / 255.0).collect()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path, classes: usize) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(path, 0, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: {n} labels need {} bytes", 8 + n),
        ));
    }
    body[..n]
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (b as usize) < classes {
                Ok(b as usize)
            } else {
                Err(Error::format(path, (8 + i) as u64, format!("label {b} >= {classes}")))
            }
        })
        .collect()
}

pub fn ingest_mnist_files(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read(images)?, images)?;
    let labels_v = parse_idx_labels(&read(labels)?, labels, 10)?;
    if labels_v.len() != n {
        return Err(Error::format(
            labels,
            4,
            format!("{} labels for {n} images in {}", labels_v.len(), images.display()),
        ));
    }
    Dataset::new((1, rows, cols), pixels, labels_v, 10)
}

/// Raw (unnormalized) MNIST train split and, if present, the test split.
pub fn ingest_mnist(dir: &Path) -> Result<(Dataset, Option<Dataset>)> {
    let train = ingest_mnist_files(&dir.join(MNIST_TRAIN_IMAGES), &dir.join(MNIST_TRAIN_LABELS))?;
    let test_images = dir.join(MNIST_TEST_IMAGES);
    let test = if test_images.exists() {
        Some(ingest_mnist_files(&test_images, &dir.join(MNIST_TEST_LABELS))?)
    } else {
        None
    };
    Ok((train, test))
}

pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.len() % CIFAR_RECORD != 0 {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return Err(Error::format(
            path,
            whole as u64,
            format!(
                "truncated record: {} trailing bytes, records are {CIFAR_RECORD} bytes",
                bytes.len() - whole
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(Error::format(
                path,
                (i * CIFAR_RECORD) as u64,
                format!("label {} >= 10", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((pixels, labels))
}

fn cifar_files(files: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let (p, l) = parse_cifar_batch(&read(f)?, f)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Dataset::new((3, 32, 32), pixels, labels, 10)
}

/// Raw CIFAR-10 train batches 1-5 and, if present, the test batch.
pub fn ingest_cifar10(dir: &Path) -> Result<(Dataset, Option<Dataset>)> {
    let train: Vec<PathBuf> = CIFAR_TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    let test_path = dir.join(CIFAR_TEST_FILE);
    let test = if test_path.exists() {
        Some(cifar_files(&[test_path])?)
    } else {
        None
    };
    Ok((cifar_files(&train)?, test))
}

/// Loads and normalizes a dataset directory.
pub fn load(kind: DatasetKind, dir: &Path) -> Result<Split> {
    let (train, test) = match kind {
        DatasetKind::Mnist => ingest_mnist(dir)?,
        DatasetKind::Cifar10 => ingest_cifar10(dir)?,
    };
    Ok(Split::new(train, test))
}
