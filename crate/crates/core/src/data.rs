//! MNIST IDX ingestion, seeded subsetting and synthetic datasets.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{arg, Error, IdxError, Result};
use crate::tensor::{Real, Rng, Tensor};

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const DATA_DIR_ENV: &str = "KWTA_DATA_DIR";

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Labeled examples; `images` is `[n, ...example_shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real = f64> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl<T: Real> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.rank() < 2 || images.shape()[0] != labels.len() {
            return Err(arg(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(arg(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Shape of a single example.
    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    fn example_len(&self) -> usize {
        self.example_shape().iter().product()
    }

    pub fn example(&self, i: usize) -> &[T] {
        let d = self.example_len();
        &self.images.data()[i * d..(i + 1) * d]
    }

    /// Batch tensor `[indices.len(), ...example_shape]` and its labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let d = self.example_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(arg(format!("example {i} out of range for {} examples", self.len())));
            }
            data.extend_from_slice(self.example(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (images, labels) = self.gather(indices)?;
        Ok(Dataset {
            images,
            labels,
            classes: self.classes,
            name: self.name.clone(),
        })
    }

    /// The first `n` examples (or all of them if fewer).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx).expect("indices in range")
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        self.labels.iter().for_each(|&l| h[l] += 1);
        h
    }

    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
            name: self.name.clone(),
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Idx(IdxError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        }))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found }.into());
    }
    Ok(())
}

/// Decodes an IDX image file into `[n, 1, rows, cols]` pixels scaled into [0, 1].
pub fn parse_idx_images<T: Real>(bytes: &[u8]) -> Result<Tensor<T>> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let scale = T::of(255.0);
    let data = bytes[16..expected]
        .iter()
        .map(|&b| T::of(f64::from(b)) / scale)
        .collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Decodes an IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    Ok(bytes[8..expected].iter().map(|&b| usize::from(b)).collect())
}

/// Loads a pair of (optionally gzipped) IDX files as a 10-class dataset.
pub fn load_idx<T: Real>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let images = parse_idx_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    if images.shape()[0] != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        }
        .into());
    }
    let name = images_path
        .as_ref()
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(images, labels, 10, name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Finds `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` in `dir`.
pub fn mnist_paths(dir: impl AsRef<Path>, split: Split) -> Result<(PathBuf, PathBuf)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |stem: String| -> Result<PathBuf> {
        [stem.clone(), format!("{stem}.gz")]
            .into_iter()
            .map(|f| dir.as_ref().join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| arg(format!("no `{stem}[.gz]` in {}", dir.as_ref().display())))
    };
    Ok((
        find(format!("{prefix}-images-idx3-ubyte"))?,
        find(format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

pub fn load_mnist<T: Real>(dir: impl AsRef<Path>, split: Split) -> Result<Dataset<T>> {
    let (img, lbl) = mnist_paths(dir, split)?;
    load_idx(img, lbl)
}

/// The MNIST directory: `$KWTA_DATA_DIR` if set, else `data/mnist` under the workspace root.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// Seeded uniform sample of `n` examples without replacement.
///
/// For `n >= 1000` every class count must lie within 20% of `n / classes`;
/// a violating draw is replaced once by a fresh one.
pub fn subset<T: Real>(ds: &Dataset<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    if n > ds.len() {
        return Err(arg(format!("subset of {n} from {} examples", ds.len())));
    }
    let mut rng = Rng::new(seed);
    let draw = |rng: &mut Rng| {
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        rng.shuffle(&mut idx);
        idx.truncate(n);
        idx
    };
    let balanced = |idx: &[usize]| {
        if n < 1000 {
            return true;
        }
        let mut h = vec![0usize; ds.classes];
        idx.iter().for_each(|&i| h[ds.labels[i]] += 1);
        let mean = n as f64 / ds.classes as f64;
        h.iter().all(|&c| (c as f64 - mean).abs() <= 0.2 * mean)
    };
    let mut idx = draw(&mut rng);
    if !balanced(&idx) {
        idx = draw(&mut rng);
    }
    ds.select(&idx)
}

/// Two isotropic Gaussian classes at `-mu` (label 0) and `+mu` (label 1) in 2-D.
///
/// Rejects draws that land within `min_margin` of the bisecting hyperplane, so
/// the returned set is separable with at least that margin.
pub fn synthetic_blobs(n: usize, mu: [f64; 2], sigma: f64, min_margin: f64, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(arg("blob dataset needs at least one point"));
    }
    let norm = mu[0].hypot(mu[1]);
    if norm <= min_margin || !(sigma > 0.0) {
        return Err(arg(format!(
            "degenerate blobs: |mu| = {norm}, margin {min_margin}, sigma {sigma}"
        )));
    }
    let dir = [mu[0] / norm, mu[1] / norm];
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let s = if label == 1 { 1.0 } else { -1.0 };
        let p = loop {
            let p = [
                s * mu[0] + sigma * rng.standard_normal(),
                s * mu[1] + sigma * rng.standard_normal(),
            ];
            if s * (p[0] * dir[0] + p[1] * dir[1]) >= min_margin {
                break p;
            }
        };
        data.extend_from_slice(&p);
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2, "blobs")
}

/// `n` evenly spaced samples `(t, g(t))` over `[a, b]`.
pub fn synthetic_1d(n: usize, a: f64, b: f64, g: impl Fn(f64) -> f64) -> Result<Vec<(f64, f64)>> {
    if n == 0 || !(b > a) {
        return Err(arg(format!(
            "1-D samples need n >= 1 and a < b (got n={n}, [{a}, {b}])"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let t = if n == 1 {
                a
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            };
            (t, g(t))
        })
        .collect())
}
