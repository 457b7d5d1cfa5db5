//! MNIST (IDX) and CIFAR-10 (binary batch) readers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;
pub const CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    /// `N x C x H x W`, values in `[-1, 1]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub split: Split,
}

/// `(p / 255) * 2 - 1`.
#[inline]
pub fn normalize_pixel<T: Scalar>(p: u8) -> T {
    T::lit(f64::from(p) / 255.0 * 2.0 - 1.0)
}

impl<T: Scalar> Dataset<T> {
    pub fn from_bytes(
        shape: [usize; 3],
        pixels: &[u8],
        labels: Vec<usize>,
        split: Split,
    ) -> Result<Self> {
        let sample: usize = shape.iter().product();
        if pixels.len() != sample * labels.len() {
            return Err(Error::invalid(
                "dataset",
                format!("{} pixels for {} samples of {shape:?}", pixels.len(), labels.len()),
            ));
        }
        let images = Tensor::new(
            vec![labels.len(), shape[0], shape[1], shape[2]],
            pixels.iter().map(|&p| normalize_pixel(p)).collect(),
        )?;
        Ok(Self { images, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample shape `C x H x W`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    /// Gathers the given samples into a batch tensor and label vector.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(shape, data).expect("batch shape"), labels)
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (images, labels) = self.batch(&idx);
        Self {
            images,
            labels,
            split: self.split,
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            needed: at + 4,
            found: bytes.len(),
        })
}

fn check_idx_magic(bytes: &[u8], path: &Path, want: u32) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic == want {
        return Ok(());
    }
    let other = if want == IDX_IMAGES_MAGIC {
        IDX_LABELS_MAGIC
    } else {
        IDX_IMAGES_MAGIC
    };
    if magic == other {
        Err(Error::WrongKind {
            path: path.to_path_buf(),
            expected: if want == IDX_IMAGES_MAGIC { "image" } else { "label" },
            found: magic,
        })
    } else {
        Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: want,
            found: magic,
        })
    }
}

/// Raw IDX image file contents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_idx_magic(bytes, path, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..needed].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_idx_magic(bytes, path, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    bytes[8..needed]
        .iter()
        .enumerate()
        .map(|(index, &b)| {
            if (b as usize) < CLASSES {
                Ok(b as usize)
            } else {
                Err(Error::LabelOutOfRange {
                    path: path.to_path_buf(),
                    index,
                    label: b.into(),
                    classes: CLASSES,
                })
            }
        })
        .collect()
}

/// Reads one image/label IDX pair.
pub fn load_idx_pair<T: Scalar>(images: &Path, labels: &Path, split: Split) -> Result<Dataset<T>> {
    let img = parse_idx_images(&read(images)?, images)?;
    let lab = parse_idx_labels(&read(labels)?, labels)?;
    if img.count != lab.len() {
        return Err(Error::CountMismatch {
            path: labels.to_path_buf(),
            detail: format!("{} images but {} labels", img.count, lab.len()),
        });
    }
    Dataset::from_bytes([1, img.rows, img.cols], &img.pixels, lab, split)
}

fn mnist_file(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    if plain.exists() {
        return plain;
    }
    let dotted = dir.join(stem.replacen("-idx", ".idx", 1));
    if dotted.exists() {
        dotted
    } else {
        plain
    }
}

/// Loads `(train, test)` from the four standard MNIST files in `dir`.
pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let train = load_idx_pair(
        &mnist_file(dir, "train-images-idx3-ubyte"),
        &mnist_file(dir, "train-labels-idx1-ubyte"),
        Split::Train,
    )?;
    let test = load_idx_pair(
        &mnist_file(dir, "t10k-images-idx3-ubyte"),
        &mnist_file(dir, "t10k-labels-idx1-ubyte"),
        Split::Test,
    )?;
    Ok((train, test))
}

/// Splits a CIFAR-10 batch file into labels and channel-planar pixels.
pub fn parse_cifar_batch(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::CountMismatch {
            path: path.to_path_buf(),
            detail: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (index, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::LabelOutOfRange {
                path: path.to_path_buf(),
                index,
                label: rec[0].into(),
                classes: CLASSES,
            });
        }
        labels.push(rec[0] as usize);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

fn load_cifar_files<T: Scalar>(files: &[PathBuf], split: Split) -> Result<Dataset<T>> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for f in files {
        let (l, p) = parse_cifar_batch(&read(f)?, f)?;
        labels.extend(l);
        pixels.extend(p);
    }
    Dataset::from_bytes([3, 32, 32], &pixels, labels, split)
}

/// Loads `(train, test)` from `data_batch_{1..5}.bin` and `test_batch.bin`,
/// either directly in `dir` or in its `cifar-10-batches-bin` subdirectory.
pub fn load_cifar10<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let train: Vec<PathBuf> = (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect();
    let test = [root.join("test_batch.bin")];
    Ok((load_cifar_files(&train, Split::Train)?, load_cifar_files(&test, Split::Test)?))
}

/// Random horizontal flip plus a random crop from a 4-pixel zero-padded image, in place.
pub fn augment_flip_crop<T: Scalar, R: Rng>(batch: &mut Tensor<T>, rng: &mut R) {
    let s = batch.shape().to_vec();
    let (c, h, w) = (s[1], s[2], s[3]);
    let pad = 4i64;
    let len = c * h * w;
    let mut tmp = vec![T::zero(); len];
    for img in batch.data_mut().chunks_mut(len) {
        let flip = rng.gen_bool(0.5);
        let dy = rng.gen_range(-pad..=pad);
        let dx = rng.gen_range(-pad..=pad);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as i64 + dy;
                    let sx0 = x as i64 + dx;
                    let sx = if flip { w as i64 - 1 - sx0 } else { sx0 };
                    tmp[(ch * h + y) * w + x] = if (0..h as i64).contains(&sy) && (0..w as i64).contains(&sx) {
                        img[(ch * h + sy as usize) * w + sx as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
        img.copy_from_slice(&tmp);
    }
}
