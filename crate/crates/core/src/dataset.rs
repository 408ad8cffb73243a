//! Labeled image sets in the DRSD binary format, plus synthetic problems
//! whose smoothed probabilities are known in closed form.
//!
//! Layout (little-endian): `b"DRSD"`, then `u32` version, count, C, H, W;
//! `count·C·H·W` `f32` intensities; `count` `u16` labels.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::oracle::{CentroidModel, LinearModel};
use crate::partition::{ImageTensor, PartitionError};
use crate::stream::RandomStream;

pub const MAGIC: &[u8; 4] = b"DRSD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("not a DRSD file (bad magic)")]
    BadMagic,
    #[error("unsupported DRSD version {0}")]
    Version(u32),
    #[error("file is {got} bytes, header implies {expected}")]
    Length { expected: u64, got: u64 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Image(#[from] PartitionError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    labels: Vec<u16>,
}

impl Dataset {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(DatasetError::Invalid(format!("zero dimension in {channels}x{height}x{width}")));
        }
        if data.len() != labels.len() * channels * height * width {
            return Err(DatasetError::Invalid(format!(
                "{} values for {} images of {channels}x{height}x{width}",
                data.len(),
                labels.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DatasetError::Invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    /// Scalars per image, `C·H·W`.
    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn raw(&self, index: usize) -> &[f32] {
        let d = self.dim();
        &self.data[index * d..(index + 1) * d]
    }

    pub fn image(&self, index: usize) -> std::result::Result<ImageTensor, PartitionError> {
        ImageTensor::new(
            self.channels,
            self.height,
            self.width,
            self.raw(index).iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.data.len() + 2 * self.labels.len());
        buf.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.channels as u32, self.height as u32, self.width as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        out.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(DatasetError::Length {
                expected: HEADER_LEN as u64,
                got: bytes.len() as u64,
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let version = word(0);
        if version != VERSION {
            return Err(DatasetError::Version(version));
        }
        let (count, c, h, w) = (word(1) as u64, word(2) as u64, word(3) as u64, word(4) as u64);
        let values = count * c * h * w;
        let expected = HEADER_LEN as u64 + 4 * values + 2 * count;
        if bytes.len() as u64 != expected {
            return Err(DatasetError::Length {
                expected,
                got: bytes.len() as u64,
            });
        }
        let body = &bytes[HEADER_LEN..];
        let (data_bytes, label_bytes) = body.split_at(4 * values as usize);
        let data = data_bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let labels = label_bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().expect("2 bytes")))
            .collect();
        Self::new(c as usize, h as usize, w as usize, data, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)
    }
}

/// A spatial shape for `d` single-channel scalars: the most square
/// `h × w` with `h ≤ w`.
pub fn shape_for_dim(d: usize) -> (usize, usize) {
    let mut h = (d as f64).sqrt() as usize;
    while h > 1 && !d.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), d / h.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    GaussianBlobs,
    LinearMargin,
}

impl std::str::FromStr for SyntheticKind {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Self::GaussianBlobs),
            "linear-margin" => Ok(Self::LinearMargin),
            other => Err(DatasetError::Invalid(format!(
                "unknown kind '{other}' (expected gaussian-blobs or linear-margin)"
            ))),
        }
    }
}

/// The model that defines a synthetic problem's labels.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticModel {
    Linear(LinearModel),
    Centroids(CentroidModel),
}

impl SyntheticModel {
    pub fn to_text(&self) -> String {
        match self {
            Self::Linear(m) => m.to_text(),
            Self::Centroids(m) => m.to_text(),
        }
    }

    /// Oracle spec string understood by the command line (`linear:` or `centroid:`).
    pub fn oracle_prefix(&self) -> &'static str {
        match self {
            Self::Linear(_) => "linear",
            Self::Centroids(_) => "centroid",
        }
    }
}

/// Generates `count` single-channel images of `d` pixels.
///
/// `LinearMargin` draws pixels uniformly and labels them with a random
/// linear model; `GaussianBlobs` draws around random centroids with spread
/// 0.1, clipped to `[0, 1]`, and labels each point by its centroid.
pub fn generate(kind: SyntheticKind, d: usize, classes: usize, count: usize, seed: u64) -> Result<(Dataset, SyntheticModel)> {
    if d == 0 || count == 0 {
        return Err(DatasetError::Invalid("d and count must be >= 1".into()));
    }
    if !(2..=u16::MAX as usize).contains(&classes) {
        return Err(DatasetError::Invalid(format!("classes must be in [2, 65535], got {classes}")));
    }
    let (h, w) = shape_for_dim(d);
    let mut rng = RandomStream::new(seed, 0);
    let invalid = |e: crate::oracle::OracleError| DatasetError::Invalid(e.to_string());
    match kind {
        SyntheticKind::LinearMargin => {
            let weights: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..d).map(|_| rng.standard_normal() / (d as f64).sqrt()).collect())
                .collect();
            // Centre the decision boundaries on the middle of the cube.
            let bias = weights.iter().map(|row| -0.5 * row.iter().sum::<f64>()).collect();
            let model = LinearModel::new(weights, bias).map_err(invalid)?;
            let mut data = Vec::with_capacity(count * d);
            let mut labels = Vec::with_capacity(count);
            let mut x = vec![0.0; d];
            for _ in 0..count {
                for v in x.iter_mut() {
                    *v = rng.uniform() as f32 as f64;
                }
                labels.push(model.classify(&x) as u16);
                data.extend(x.iter().map(|&v| v as f32));
            }
            Ok((Dataset::new(1, h, w, data, labels)?, SyntheticModel::Linear(model)))
        }
        SyntheticKind::GaussianBlobs => {
            let centroids: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..d).map(|_| 0.2 + 0.6 * rng.uniform()).collect())
                .collect();
            let model = CentroidModel::new(centroids.clone()).map_err(invalid)?;
            let mut data = Vec::with_capacity(count * d);
            let mut labels = Vec::with_capacity(count);
            for i in 0..count {
                let k = i % classes;
                labels.push(k as u16);
                data.extend(
                    centroids[k]
                        .iter()
                        .map(|&c| (c + 0.1 * rng.standard_normal()).clamp(0.0, 1.0) as f32),
                );
            }
            Ok((Dataset::new(1, h, w, data, labels)?, SyntheticModel::Centroids(model)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(1, 2, 2, vec![0.0, 0.25, 0.5, 1.0, 0.1, 0.2, 0.3, 0.4], vec![1, 7]).unwrap()
    }

    #[test]
    fn binary_round_trip_and_length() {
        let ds = tiny();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 4 * 8 + 2 * 2);
        assert_eq!(&buf[..4], b"DRSD");
        assert_eq!(Dataset::from_bytes(&buf).unwrap(), ds);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        tiny().write_to(&mut buf).unwrap();
        assert!(matches!(Dataset::from_bytes(&buf[..buf.len() - 1]), Err(DatasetError::Length { .. })));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bad), Err(DatasetError::BadMagic)));
        let mut v2 = buf.clone();
        v2[4] = 2;
        assert!(matches!(Dataset::from_bytes(&v2), Err(DatasetError::Version(2))));
        let mut big = buf;
        big[24..28].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(Dataset::from_bytes(&big), Err(DatasetError::Invalid(_))));
    }

    #[test]
    fn square_ish_shapes() {
        assert_eq!(shape_for_dim(32), (4, 8));
        assert_eq!(shape_for_dim(3072), (48, 64));
        assert_eq!(shape_for_dim(7), (1, 7));
        assert_eq!(shape_for_dim(16), (4, 4));
    }

    #[test]
    fn synthetic_is_reproducible_and_consistent() {
        for kind in [SyntheticKind::LinearMargin, SyntheticKind::GaussianBlobs] {
            let (a, ma) = generate(kind, 32, 3, 50, 11).unwrap();
            let (b, mb) = generate(kind, 32, 3, 50, 11).unwrap();
            assert_eq!(a, b);
            assert_eq!(ma, mb);
            assert_eq!(a.shape(), (1, 4, 8));
            if let SyntheticModel::Linear(m) = &ma {
                for i in 0..a.len() {
                    let x: Vec<f64> = a.raw(i).iter().map(|&v| v as f64).collect();
                    assert_eq!(m.classify(&x), a.labels()[i] as usize);
                }
            }
        }
        assert!(generate(SyntheticKind::LinearMargin, 32, 2, 0, 1).is_err());
    }
}
