//! Per-pixel grids: optical flow, RGB frames and masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
#[cfg(not(feature = "std"))]
use num_traits::Float;

fn check_len(what: &'static str, width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 || width.checked_mul(height) != Some(len) {
        return Err(Error::shape(what, format!("{width}x{height} grid with {len} entries")));
    }
    Ok(())
}

/// Dense displacement field, one `(u, v)` vector per pixel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, vectors: Vec<[f32; 2]>) -> Result<Self> {
        check_len("flow", width, height, vectors.len())?;
        Ok(Self { width, height, vectors })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, vectors: vec![[0.0; 2]; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut vectors = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                vectors.push(f(x, y));
            }
        }
        Self { width, height, vectors }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut [[f32; 2]] {
        &mut self.vectors
    }

    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v[0].is_finite() && v[1].is_finite())
    }

    /// Root mean square of the vector magnitudes.
    pub fn rms(&self) -> f64 {
        let total: f64 = self.vectors.iter().map(|v| (v[0] as f64).powi(2) + (v[1] as f64).powi(2)).sum();
        (total / self.vectors.len() as f64).sqrt()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| ((v[0] as f64).powi(2) + (v[1] as f64).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            vectors: self.vectors.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
        }
    }

    /// Planar `2 × H × W` values, appended to `out`.
    pub fn write_planar<S: Scalar>(&self, out: &mut Vec<S>) {
        out.extend(self.vectors.iter().map(|v| S::of(v[0] as f64)));
        out.extend(self.vectors.iter().map(|v| S::of(v[1] as f64)));
    }

    /// Reads sample `index` of an `N × 2 × H × W` tensor.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4("flow")?;
        if c != 2 || index >= n {
            return Err(Error::shape("flow", format!("sample {index} of {:?}", t.shape())));
        }
        let hw = h * w;
        let d = &t.data()[index * 2 * hw..(index + 1) * 2 * hw];
        let vectors = (0..hw).map(|i| [d[i].f64() as f32, d[hw + i].f64() as f32]).collect();
        Self::new(w, h, vectors)
    }
}

/// RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<[f32; 3]>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        check_len("frame", width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }

    pub fn write_planar<S: Scalar>(&self, out: &mut Vec<S>) {
        for c in 0..3 {
            out.extend(self.pixels.iter().map(|p| S::of(p[c] as f64)));
        }
    }
}

/// Binary region indicator, `true` = foreground.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_len("mask", width, height, bits.len())?;
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    pub fn same_size(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    /// `1.0` inside, `0.0` outside, appended to `out`.
    pub fn write_planar<S: Scalar>(&self, out: &mut Vec<S>) {
        out.extend(self.bits.iter().map(|&b| if b { S::one() } else { S::zero() }));
    }
}

/// Per-pixel foreground probability.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    width: usize,
    height: usize,
    probs: Vec<f32>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, probs: Vec<f32>) -> Result<Self> {
        check_len("soft mask", width, height, probs.len())?;
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { width, height, probs })
    }

    pub fn uniform(width: usize, height: usize, p: f32) -> Self {
        Self { width, height, probs: vec![p; width * height] }
    }

    pub fn from_mask(mask: &Mask) -> Self {
        Self {
            width: mask.width,
            height: mask.height,
            probs: mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    /// Foreground wherever the probability is at least `threshold`.
    pub fn binarize(&self, threshold: f32) -> Mask {
        Mask { width: self.width, height: self.height, bits: self.probs.iter().map(|&p| p >= threshold).collect() }
    }

    pub fn complement(&self) -> Self {
        Self { width: self.width, height: self.height, probs: self.probs.iter().map(|p| 1.0 - p).collect() }
    }

    pub fn write_planar<S: Scalar>(&self, out: &mut Vec<S>) {
        out.extend(self.probs.iter().map(|&p| S::of(p as f64)));
    }

    /// Reads sample `index` of an `N × 1 × H × W` tensor.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4("soft mask")?;
        if c != 1 || index >= n {
            return Err(Error::shape("soft mask", format!("sample {index} of {:?}", t.shape())));
        }
        let hw = h * w;
        let probs = t.data()[index * hw..(index + 1) * hw].iter().map(|v| (v.f64() as f32).clamp(0.0, 1.0)).collect();
        Self::new(w, h, probs)
    }
}
