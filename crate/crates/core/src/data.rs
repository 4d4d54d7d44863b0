//! Labelled datasets: IDX and CIFAR binary readers, an IDX writer, and
//! seeded synthetic generators for desk-scale runs.
//!
//! Loaders scale pixel bytes to `[0, 1]`; normalization is applied later,
//! per channel, from a [`Normalization`] carried with the dataset.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: usize,
}

/// Per-channel affine normalization `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.mean.len() != self.std.len() {
            return Err(Error::Config("normalization needs equal-length mean and std lists".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) || self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("normalization std must be positive and values finite".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let channels = self.mean.len();
        let plane = if x.rank() == 3 { x.len() / x.shape()[0] } else { x.len() };
        let have = if x.rank() == 3 { x.shape()[0] } else { 1 };
        if have != channels {
            return Err(Error::shape("normalization", &[channels], &[have]));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane.max(1);
                (v - self.mean[c]) / self.std[c]
            })
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
    pub n_classes: usize,
    pub normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<Sample>, n_classes: usize) -> Result<Self> {
        let ds = LabeledDataset {
            samples,
            n_classes,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.sample_shape();
        for s in &self.samples {
            if s.label >= self.n_classes {
                return Err(Error::InvalidLabel {
                    label: s.label,
                    n_classes: self.n_classes,
                });
            }
            if Some(s.x.shape()) != shape {
                return Err(Error::shape("dataset sample", shape.unwrap_or(&[]), s.x.shape()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.x.shape())
    }

    /// Raises `n_classes` to `n` (e.g. a test split that misses a class).
    pub fn with_classes(mut self, n: usize) -> Result<Self> {
        self.n_classes = self.n_classes.max(n);
        self.validate()?;
        Ok(self)
    }

    /// Per-channel mean and standard deviation over all samples. Rank-3
    /// samples are read as C×H×W; anything else counts as one channel.
    pub fn channel_stats(&self) -> Result<Normalization> {
        let shape = self.sample_shape().ok_or(Error::EmptyDataset)?;
        let channels = if shape.len() == 3 { shape[0] } else { 1 };
        let numel: usize = shape.iter().product();
        let plane = numel / channels;
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        for s in &self.samples {
            for (i, &v) in s.x.data().iter().enumerate() {
                sum[i / plane] += v;
                sq[i / plane] += v * v;
            }
        }
        let n = (self.samples.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalization { mean, std })
    }

    /// Applies `norm` to every sample and records it.
    pub fn normalized(&self, norm: &Normalization) -> Result<LabeledDataset> {
        norm.validate()?;
        let samples = self
            .samples
            .iter()
            .map(|s| {
                Ok(Sample {
                    x: norm.apply(&s.x)?,
                    label: s.label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(LabeledDataset {
            samples,
            n_classes: self.n_classes,
            normalization: Some(norm.clone()),
        })
    }

    pub fn take(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.iter().take(n).cloned().collect(),
            n_classes: self.n_classes,
            normalization: self.normalization.clone(),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let chunk = self.take(4)?;
        Ok(u32::from_be_bytes(chunk.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::parse(
                self.what,
                format!("truncated: need {n} bytes at offset {}, have {}", self.pos, self.bytes.len() - self.pos),
            )
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.what,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Parses an IDX image file (`0x00000803`, big-endian `n, rows, cols`,
/// then pixel bytes) and its IDX label file (`0x00000801`, `n`, then label
/// bytes). Images become `1 × rows × cols` tensors in `[0, 1]`.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let mut img = Reader::new(images, "IDX images");
    let magic = img.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse("IDX images", format!("bad magic 0x{magic:08x}")));
    }
    let n = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;

    let mut lab = Reader::new(labels, "IDX labels");
    let magic = lab.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse("IDX labels", format!("bad magic 0x{magic:08x}")));
    }
    let n_labels = lab.u32_be()? as usize;
    if n_labels != n {
        return Err(Error::parse("IDX", format!("{n} images but {n_labels} labels")));
    }
    let label_bytes = lab.take(n)?;
    lab.finish()?;

    let pixels = rows
        .checked_mul(cols)
        .filter(|&p| p > 0 || n == 0)
        .ok_or_else(|| Error::parse("IDX images", format!("bad image size {rows}x{cols}")))?;
    let total = pixels
        .checked_mul(n)
        .ok_or_else(|| Error::parse("IDX images", "image payload size overflows"))?;
    let pixel_bytes = img.take(total)?;
    img.finish()?;

    let samples: Vec<Sample> = label_bytes
        .iter()
        .enumerate()
        .map(|(i, &label)| Sample {
            x: Tensor::from_parts(
                vec![1, rows, cols],
                pixel_bytes[i * pixels..(i + 1) * pixels].iter().map(|&b| b as f64 / 255.0).collect(),
            ),
            label: label as usize,
        })
        .collect();
    let n_classes = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
    LabeledDataset::new(samples, n_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    parse_idx(&images, &labels)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Encodes a dataset as an IDX image/label file pair. Samples must be
/// `1×H×W`, `H×W` or flat vectors (written as `1×D` images); values are
/// clamped to `[0, 1]` and rounded to bytes.
pub fn encode_idx(ds: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match ds.sample_shape() {
        None => (0, 0),
        Some(&[1, h, w]) | Some(&[h, w]) => (h, w),
        Some(&[d]) => (1, d),
        Some(other) => {
            return Err(Error::InvalidParam(format!(
                "IDX images must be single-channel, got sample shape {other:?}"
            )))
        }
    };
    if ds.n_classes > 256 {
        return Err(Error::InvalidParam("IDX labels are single bytes".into()));
    }
    let mut images = Vec::with_capacity(16 + ds.len() * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for s in &ds.samples {
        images.extend(s.x.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        labels.push(s.label as u8);
    }
    Ok((images, labels))
}

pub fn write_idx(ds: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = encode_idx(ds)?;
    std::fs::write(images_path.as_ref(), images).map_err(|e| Error::io(images_path.as_ref(), e))?;
    std::fs::write(labels_path.as_ref(), labels).map_err(|e| Error::io(labels_path.as_ref(), e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse and fine label bytes per record; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Parses CIFAR binary records into `3×32×32` tensors in `[0, 1]`.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<LabeledDataset> {
    let rec = variant.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::parse(
            "CIFAR",
            format!("length {} is not a multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    let mut samples = Vec::with_capacity(bytes.len() / rec);
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = match variant {
            CifarVariant::Cifar10 => record[0] as usize,
            CifarVariant::Cifar100 => {
                if record[0] >= 20 {
                    return Err(Error::parse("CIFAR", format!("record {i}: coarse label {} out of range", record[0])));
                }
                record[1] as usize
            }
        };
        if label >= variant.n_classes() {
            return Err(Error::parse("CIFAR", format!("record {i}: label {label} out of range")));
        }
        let x = record[variant.label_bytes()..].iter().map(|&b| b as f64 / 255.0).collect();
        samples.push(Sample {
            x: Tensor::from_parts(vec![3, 32, 32], x),
            label,
        });
    }
    LabeledDataset::new(samples, variant.n_classes())
}

pub fn load_cifar_bin(path: impl AsRef<Path>, variant: CifarVariant) -> Result<LabeledDataset> {
    parse_cifar(&read_file(path.as_ref())?, variant)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Gaussian clusters with centres spread around a circle; linearly
    /// separable for small `spread`.
    Blobs { classes: usize, dim: usize, spread: f64 },
    /// Two interleaved spirals in the unit square; not linearly separable.
    TwoSpirals { noise: f64 },
    /// Ten 5×7 digit glyphs placed at random offsets on a `side × side`
    /// canvas with random stroke intensity, dropout and background noise.
    Glyphs { side: usize, noise: f64 },
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Blobs { .. } => "blobs",
            SyntheticKind::TwoSpirals { .. } => "spirals",
            SyntheticKind::Glyphs { .. } => "glyphs",
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            SyntheticKind::Blobs { classes, .. } => classes,
            SyntheticKind::TwoSpirals { .. } => 2,
            SyntheticKind::Glyphs { .. } => 10,
        }
    }

    pub fn sample_shape(&self) -> Vec<usize> {
        match *self {
            SyntheticKind::Blobs { dim, .. } => vec![dim],
            SyntheticKind::TwoSpirals { .. } => vec![2],
            SyntheticKind::Glyphs { side, .. } => vec![1, side, side],
        }
    }

    pub fn blobs() -> Self {
        SyntheticKind::Blobs {
            classes: 4,
            dim: 2,
            spread: 0.05,
        }
    }

    pub fn spirals() -> Self {
        SyntheticKind::TwoSpirals { noise: 0.02 }
    }

    pub fn glyphs() -> Self {
        SyntheticKind::Glyphs { side: 16, noise: 0.2 }
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticKind::blobs()),
            "spirals" | "two_spirals" => Ok(SyntheticKind::spirals()),
            "glyphs" => Ok(SyntheticKind::glyphs()),
            _ => Err(Error::Config(format!("unknown synthetic kind '{s}' (blobs|spirals|glyphs)"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const GLYPHS: [[&str; 7]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

/// Seeded synthetic dataset of `n` samples with labels cycling through the
/// classes.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidParam("synthetic dataset needs n > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = kind.n_classes();
    let samples = match kind {
        SyntheticKind::Blobs { classes, dim, spread } => {
            if classes == 0 || dim == 0 || spread.is_nan() || spread < 0.0 {
                return Err(Error::InvalidParam("blobs need classes > 0, dim > 0, spread >= 0".into()));
            }
            let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidParam(e.to_string()))?;
            (0..n)
                .map(|i| {
                    let label = i % classes;
                    let theta = std::f64::consts::TAU * label as f64 / classes as f64;
                    let x = (0..dim)
                        .map(|d| {
                            let phase = std::f64::consts::PI * d as f64 / dim.max(2) as f64;
                            0.5 + 0.4 * (theta + phase).cos() + noise.sample(&mut rng)
                        })
                        .collect();
                    Sample {
                        x: Tensor::from_parts(vec![dim], x),
                        label,
                    }
                })
                .collect()
        }
        SyntheticKind::TwoSpirals { noise } => {
            let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::InvalidParam(e.to_string()))?;
            (0..n)
                .map(|i| {
                    let label = i % 2;
                    let t: f64 = 0.05 + 0.95 * rng.random::<f64>().sqrt();
                    let angle = t * 3.0 * std::f64::consts::PI + label as f64 * std::f64::consts::PI;
                    let x = vec![
                        0.5 + 0.45 * t * angle.cos() + jitter.sample(&mut rng),
                        0.5 + 0.45 * t * angle.sin() + jitter.sample(&mut rng),
                    ];
                    Sample {
                        x: Tensor::from_parts(vec![2], x),
                        label,
                    }
                })
                .collect()
        }
        SyntheticKind::Glyphs { side, noise } => {
            let scale = if side >= 16 { 2 } else { 1 };
            let (gh, gw) = (7 * scale, 5 * scale);
            if side < gh {
                return Err(Error::InvalidParam(format!("glyph canvas must be at least {gh} pixels")));
            }
            (0..n)
                .map(|i| {
                    let label = i % 10;
                    let mut img = vec![0.0; side * side];
                    for v in img.iter_mut() {
                        *v = noise * rng.random::<f64>();
                    }
                    let oy = rng.random_range(0..=side - gh);
                    let ox = rng.random_range(0..=side - gw);
                    let ink = rng.random_range(0.6..=1.0);
                    for (r, row) in GLYPHS[label].iter().enumerate() {
                        for (c, bit) in row.bytes().enumerate() {
                            if bit != b'1' {
                                continue;
                            }
                            for dy in 0..scale {
                                for dx in 0..scale {
                                    if rng.random::<f64>() < 0.1 {
                                        continue;
                                    }
                                    let y = oy + r * scale + dy;
                                    let x = ox + c * scale + dx;
                                    img[y * side + x] = (ink + noise * rng.random::<f64>()).min(1.0);
                                }
                            }
                        }
                    }
                    Sample {
                        x: Tensor::from_parts(vec![1, side, side], img),
                        label,
                    }
                })
                .collect()
        }
    };
    LabeledDataset::new(samples, classes)
}
