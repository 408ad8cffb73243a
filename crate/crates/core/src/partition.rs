//! Diagonal 2×2 down-sampling, per-branch noise and resize back to the
//! parent resolution.
//!
//! Every 2×2 block at even offsets sends its main diagonal to the left
//! sub-image and its anti-diagonal to the right one. Odd heights or widths
//! are padded by edge replication first, so both halves always hold exactly
//! half of the (padded) pixels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::RandomStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("image dimensions must be positive, got {channels}x{height}x{width}")]
    EmptyShape {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("data length {got} does not match {channels}x{height}x{width}")]
    DataLength {
        channels: usize,
        height: usize,
        width: usize,
        got: usize,
    },
    #[error("clean image value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image shape {image:?} does not match partition source shape {expected:?}")]
    ShapeMismatch {
        image: (usize, usize),
        expected: (usize, usize),
    },
    #[error("resize from {from:?} to {to:?} would downscale")]
    Downscale {
        from: (usize, usize),
        to: (usize, usize),
    },
    #[error("noise sigma must be finite and > 0, got {0}")]
    InvalidSigma(f64),
    #[error("unknown interpolation '{0}' (expected bilinear or nearest)")]
    UnknownInterpolation(String),
}

/// A `C × H × W` image in channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    noised: bool,
}

impl ImageTensor {
    /// A clean image; every value must lie in `[0, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, PartitionError> {
        let t = Self::unchecked_values(channels, height, width, data, false)?;
        if let Some((index, &value)) = t.data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(PartitionError::OutOfRange { index, value });
        }
        Ok(t)
    }

    /// A tensor exempt from the unit-interval check (noised or resized noise).
    pub fn noised(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, PartitionError> {
        Self::unchecked_values(channels, height, width, data, true)
    }

    fn unchecked_values(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        noised: bool,
    ) -> Result<Self, PartitionError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(PartitionError::EmptyShape { channels, height, width });
        }
        if data.len() != channels * height * width {
            return Err(PartitionError::DataLength {
                channels,
                height,
                width,
                got: data.len(),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            noised,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self, PartitionError> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    /// Total number of scalars, `C·H·W`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }
    pub fn is_noised(&self) -> bool {
        self.noised
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }
}

/// A pixel position in the (possibly padded) grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
    /// True when the position lies in the replicated padding row or column.
    pub replicated: bool,
}

/// The two disjoint diagonal index sets covering an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionIndex {
    left: Vec<PixelIndex>,
    right: Vec<PixelIndex>,
    source_shape: (usize, usize),
    padded_shape: (usize, usize),
}

/// Builds the diagonal-kernel partition for an `height × width` image.
///
/// Sub-image pixel `(r, c)` of the left half is `left()[r * W'/2 + c]`, where
/// `W'` is the padded width: each parent row contributes its selected pixels
/// in ascending column order.
pub fn make_diagonal_partition(height: usize, width: usize) -> Result<PartitionIndex, PartitionError> {
    if height == 0 || width == 0 {
        return Err(PartitionError::EmptyShape {
            channels: 1,
            height,
            width,
        });
    }
    let ph = height + height % 2;
    let pw = width + width % 2;
    let half = ph * pw / 2;
    let mut left = Vec::with_capacity(half);
    let mut right = Vec::with_capacity(half);
    for row in 0..ph {
        for col in 0..pw {
            let px = PixelIndex {
                row,
                col,
                replicated: row >= height || col >= width,
            };
            if row % 2 == col % 2 {
                left.push(px);
            } else {
                right.push(px);
            }
        }
    }
    Ok(PartitionIndex {
        left,
        right,
        source_shape: (height, width),
        padded_shape: (ph, pw),
    })
}

impl PartitionIndex {
    pub fn left(&self) -> &[PixelIndex] {
        &self.left
    }
    pub fn right(&self) -> &[PixelIndex] {
        &self.right
    }
    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }
    pub fn padded_shape(&self) -> (usize, usize) {
        self.padded_shape
    }
    pub fn is_padded(&self) -> bool {
        self.source_shape != self.padded_shape
    }
    /// `(H', W'/2)`, the spatial shape of each sub-image.
    pub fn sub_shape(&self) -> (usize, usize) {
        (self.padded_shape.0, self.padded_shape.1 / 2)
    }

    /// Writes the sub-images back into a padded parent.
    pub fn reassemble(&self, pair: &SubImagePair) -> Result<ImageTensor, PartitionError> {
        let (ph, pw) = self.padded_shape;
        let c = pair.left.channels;
        let n = self.left.len();
        let mut data = vec![0.0; c * ph * pw];
        for ch in 0..c {
            for (k, px) in self.left.iter().enumerate() {
                data[(ch * ph + px.row) * pw + px.col] = pair.left.data[ch * n + k];
            }
            for (k, px) in self.right.iter().enumerate() {
                data[(ch * ph + px.row) * pw + px.col] = pair.right.data[ch * n + k];
            }
        }
        ImageTensor::unchecked_values(c, ph, pw, data, pair.left.noised || pair.right.noised)
    }
}

/// Left and right sub-images of one parent.
#[derive(Debug, Clone, PartialEq)]
pub struct SubImagePair {
    pub left: ImageTensor,
    pub right: ImageTensor,
    /// `(C, H', W')` of the padded parent.
    pub parent_shape: (usize, usize, usize),
}

impl SubImagePair {
    /// Scalars per sub-image (`m = n = d/2`).
    pub fn branch_dim(&self) -> usize {
        self.left.dim()
    }
}

/// Splits `x` into its diagonal sub-images, padding odd edges by replication.
pub fn downsample(x: &ImageTensor, idx: &PartitionIndex) -> Result<SubImagePair, PartitionError> {
    if (x.height, x.width) != idx.source_shape {
        return Err(PartitionError::ShapeMismatch {
            image: (x.height, x.width),
            expected: idx.source_shape,
        });
    }
    let (sh, sw) = idx.sub_shape();
    let gather = |set: &[PixelIndex]| -> Vec<f64> {
        let mut out = Vec::with_capacity(x.channels * set.len());
        for ch in 0..x.channels {
            out.extend(
                set.iter()
                    .map(|px| x.get(ch, px.row.min(x.height - 1), px.col.min(x.width - 1))),
            );
        }
        out
    };
    let left = ImageTensor::unchecked_values(x.channels, sh, sw, gather(&idx.left), x.noised)?;
    let right = ImageTensor::unchecked_values(x.channels, sh, sw, gather(&idx.right), x.noised)?;
    Ok(SubImagePair {
        left,
        right,
        parent_shape: (x.channels, idx.padded_shape.0, idx.padded_shape.1),
    })
}

/// Returns `x + ε`, `ε ~ N(0, σ²I)`, drawing from `stream` in element order.
/// The result is not clamped.
pub fn add_gaussian_noise(x: &ImageTensor, sigma: f64, stream: &mut RandomStream) -> Result<ImageTensor, PartitionError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(PartitionError::InvalidSigma(sigma));
    }
    let mut data = x.data.clone();
    stream.perturb(&mut data, sigma);
    ImageTensor::noised(x.channels, x.height, x.width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    #[default]
    Bilinear,
    Nearest,
}

impl FromStr for Interpolation {
    type Err = PartitionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "nearest" => Ok(Self::Nearest),
            other => Err(PartitionError::UnknownInterpolation(other.to_string())),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bilinear => "bilinear",
            Self::Nearest => "nearest",
        })
    }
}

/// One output coordinate: blend of `lo` and `hi` with weight `t` on `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn axis_taps(src: usize, dst: usize, method: Interpolation) -> Vec<Tap> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).max(0.0);
            match method {
                Interpolation::Bilinear => {
                    let lo = (s.floor() as usize).min(src - 1);
                    let hi = (lo + 1).min(src - 1);
                    let t = if hi == lo { 0.0 } else { s - lo as f64 };
                    Tap { lo, hi, t }
                }
                Interpolation::Nearest => {
                    let k = ((s + 0.5).floor() as usize).min(src - 1);
                    Tap { lo: k, hi: k, t: 0.0 }
                }
            }
        })
        .collect()
}

/// Precomputed separable resize from `src` to `dst` spatial shape.
///
/// Sample centres follow the align-corners-false convention:
/// `src = (i + 0.5) / scale - 0.5`, clamped to the image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizePlan {
    src: (usize, usize),
    dst: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
    identity: bool,
}

impl ResizePlan {
    pub fn new(src: (usize, usize), dst: (usize, usize), method: Interpolation) -> Result<Self, PartitionError> {
        if src.0 == 0 || src.1 == 0 {
            return Err(PartitionError::EmptyShape {
                channels: 1,
                height: src.0,
                width: src.1,
            });
        }
        if dst.0 < src.0 || dst.1 < src.1 {
            return Err(PartitionError::Downscale { from: src, to: dst });
        }
        Ok(Self {
            src,
            dst,
            rows: axis_taps(src.0, dst.0, method),
            cols: axis_taps(src.1, dst.1, method),
            identity: src == dst,
        })
    }

    pub fn src_shape(&self) -> (usize, usize) {
        self.src
    }
    pub fn dst_shape(&self) -> (usize, usize) {
        self.dst
    }

    /// Resizes `channels` planes from `input` into `out`.
    pub fn apply_into(&self, input: &[f64], channels: usize, out: &mut [f64]) {
        let (sh, sw) = self.src;
        let (dh, dw) = self.dst;
        debug_assert_eq!(input.len(), channels * sh * sw);
        debug_assert_eq!(out.len(), channels * dh * dw);
        if self.identity {
            out.copy_from_slice(input);
            return;
        }
        for ch in 0..channels {
            let plane = &input[ch * sh * sw..(ch + 1) * sh * sw];
            let dest = &mut out[ch * dh * dw..(ch + 1) * dh * dw];
            for (i, ry) in self.rows.iter().enumerate() {
                let r0 = &plane[ry.lo * sw..(ry.lo + 1) * sw];
                let r1 = &plane[ry.hi * sw..(ry.hi + 1) * sw];
                let row_out = &mut dest[i * dw..(i + 1) * dw];
                for (o, cx) in row_out.iter_mut().zip(&self.cols) {
                    let top = r0[cx.lo] + (r0[cx.hi] - r0[cx.lo]) * cx.t;
                    let bottom = r1[cx.lo] + (r1[cx.hi] - r1[cx.lo]) * cx.t;
                    *o = top + (bottom - top) * ry.t;
                }
            }
        }
    }

    pub fn apply(&self, sub: &ImageTensor) -> ImageTensor {
        let mut out = vec![0.0; sub.channels * self.dst.0 * self.dst.1];
        self.apply_into(&sub.data, sub.channels, &mut out);
        ImageTensor {
            channels: sub.channels,
            height: self.dst.0,
            width: self.dst.1,
            data: out,
            noised: sub.noised,
        }
    }
}

/// Resizes a sub-image up to `target_h × target_w`.
pub fn resize_to(
    sub: &ImageTensor,
    target_h: usize,
    target_w: usize,
    method: Interpolation,
) -> Result<ImageTensor, PartitionError> {
    let plan = ResizePlan::new((sub.height, sub.width), (target_h, target_w), method)?;
    Ok(plan.apply(sub))
}

/// One branch's noisy view: noise in sub-image space, then resize.
pub fn noisy_branch_view(
    sub: &ImageTensor,
    sigma: f64,
    stream: &mut RandomStream,
    plan: &ResizePlan,
) -> Result<ImageTensor, PartitionError> {
    let noisy = add_gaussian_noise(sub, sigma, stream)?;
    Ok(plan.apply(&noisy))
}
