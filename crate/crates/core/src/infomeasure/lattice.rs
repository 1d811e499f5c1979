//! Exhaustive search for the object on a tiny lattice of flow samples.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};

use super::{Covariance, GaussianBlockModel};
use crate::error::{Error, Result};
use crate::rng::{seeded, streams};

/// Shrinkage toward the diagonal applied to sample covariances.
pub const SHRINKAGE: f64 = 1e-3;

/// Largest lattice that may be enumerated.
pub const MAX_PIXELS: usize = 16;

/// Independent draws of a 2-component flow on `n` pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeFlowSamples {
    pub width: usize,
    pub height: usize,
    /// Row-major `m x 2n`: pixel `i` owns columns `2i` and `2i + 1`.
    pub samples: Vec<f64>,
    pub count: usize,
    /// Ground-truth object membership per pixel.
    pub object: Vec<bool>,
}

impl LatticeFlowSamples {
    pub fn new(width: usize, height: usize, samples: Vec<f64>, object: Vec<bool>) -> Result<Self> {
        let n = width * height;
        if n == 0 || n > MAX_PIXELS {
            return Err(Error::Config(format!("lattice of {n} pixels; 1 to {MAX_PIXELS} supported")));
        }
        if object.len() != n || samples.len() % (2 * n) != 0 {
            return Err(Error::shape("lattice samples", format!("{} values, {} labels for {n} pixels", samples.len(), object.len())));
        }
        let count = samples.len() / (2 * n);
        if count < 10 * n {
            return Err(Error::Config(format!("{count} samples for {n} pixels; at least {} needed", 10 * n)));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "lattice samples" });
        }
        Ok(Self { width, height, samples, count, object })
    }

    /// Pixels in `object` share one random 2-D motion, the others share an
    /// independent one; every component gets independent noise of standard
    /// deviation `noise * scale`. Motions are normal with standard deviation
    /// `scale`.
    pub fn generate(width: usize, height: usize, object: Vec<bool>, count: usize, scale: f64, noise: f64, seed: u64) -> Result<Self> {
        let n = width * height;
        let motion = Normal::new(0.0, scale).map_err(|_| Error::Config("motion scale must be positive".into()))?;
        let jitter = Normal::new(0.0, noise * scale).map_err(|_| Error::Config("noise must be non-negative".into()))?;
        let mut fg_rng = seeded(seed, streams::FOREGROUND_MOTION);
        let mut bg_rng = seeded(seed, streams::BACKGROUND_MOTION);
        let mut noise_rng = seeded(seed, streams::NOISE);
        let mut samples = Vec::with_capacity(count * 2 * n);
        for _ in 0..count {
            let fg = [motion.sample(&mut fg_rng), motion.sample(&mut fg_rng)];
            let bg = [motion.sample(&mut bg_rng), motion.sample(&mut bg_rng)];
            for &inside in object.iter().take(n) {
                let m = if inside { fg } else { bg };
                samples.push(m[0] + jitter.sample(&mut noise_rng));
                samples.push(m[1] + jitter.sample(&mut noise_rng));
            }
        }
        Self::new(width, height, samples, object)
    }

    /// A random object of `size` pixels.
    pub fn random_object(pixels: usize, size: usize, seed: u64) -> Vec<bool> {
        let mut object = vec![false; pixels];
        for i in sample(&mut seeded(seed, streams::SHAPE), pixels, size.min(pixels)) {
            object[i] = true;
        }
        object
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Object membership as a bit mask (bit `i` = pixel `i`).
    pub fn object_bits(&self) -> u32 {
        self.object.iter().enumerate().filter(|(_, &b)| b).fold(0, |acc, (i, _)| acc | 1 << i)
    }

    /// Sample covariance, shrunk toward its diagonal by [`SHRINKAGE`].
    pub fn covariance(&self) -> Result<Covariance> {
        let d = 2 * self.pixels();
        let m = self.count as f64;
        let mut mean = vec![0.0; d];
        for row in self.samples.chunks(d) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v / m;
            }
        }
        let mut cov = vec![0.0; d * d];
        for row in self.samples.chunks(d) {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..=i {
                    cov[i * d + j] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / (m - 1.0) * if i == j { 1.0 } else { 1.0 - SHRINKAGE };
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Covariance::new(d, cov).map_err(|_| Error::NotPositiveDefinite("sample covariance; draw more samples".into()))
    }
}

/// Loss of one enumerated region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRow {
    /// Bit `i` set when pixel `i` is in the region.
    pub mask: u32,
    /// `gamma(region | complement)`.
    pub term_in: f64,
    /// `gamma(complement | region)`.
    pub term_out: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    /// One row per subset of the lattice, indexed by mask.
    pub table: Vec<OracleRow>,
    /// Lowest-index minimizer of the total.
    pub argmin: u32,
    pub pixels: usize,
}

impl BruteForce {
    pub fn complement(&self, mask: u32) -> u32 {
        !mask & ((1u32 << self.pixels) - 1)
    }

    /// Whether the minimizer is `truth` or its complement (the loss cannot
    /// tell them apart).
    pub fn recovers(&self, truth: u32) -> bool {
        self.argmin == truth || self.argmin == self.complement(truth)
    }

    pub fn loss(&self, mask: u32) -> f64 {
        self.table[mask as usize].total
    }
}

fn dims(mask: u32, pixels: usize) -> Vec<usize> {
    (0..pixels).filter(|i| mask >> i & 1 == 1).flat_map(|i| [2 * i, 2 * i + 1]).collect()
}

/// `1 - H(x | y) / (H(x) + eps)`, with `H` of the empty set equal to 0.
fn guarded_irr(model: &GaussianBlockModel, x: &[usize], y: &[usize], eps: f64) -> Result<f64> {
    if x.is_empty() {
        return Ok(1.0);
    }
    let hx = model.entropy(x)?;
    let hxy = model.conditional_entropy(x, y)?;
    Ok(1.0 - hxy / (hx + eps))
}

/// Evaluates `L(region) = gamma(region | rest) + gamma(rest | region)` for
/// every subset of the lattice, using Gaussian entropies of the sample
/// covariance. Empty sets have zero entropy and `eps` guards the
/// denominators, so the empty region and the full lattice score
/// `1 + eps / (H + eps)`.
pub fn brute_force_object(samples: &LatticeFlowSamples, eps: f64) -> Result<BruteForce> {
    if !(eps > 0.0) {
        return Err(Error::Config("eps must be positive".into()));
    }
    let n = samples.pixels();
    let cov = samples.covariance()?;
    let d = cov.dim();
    let model = GaussianBlockModel::new(cov, vec![0.0; d], (0..d).collect(), Vec::new())?;
    let full = (1u32 << n) - 1;
    let mut table = Vec::with_capacity(1 << n);
    for mask in 0..=full {
        let inside = dims(mask, n);
        let outside = dims(full ^ mask, n);
        let term_in = guarded_irr(&model, &inside, &outside, eps)?;
        let term_out = guarded_irr(&model, &outside, &inside, eps)?;
        table.push(OracleRow { mask, term_in, term_out, total: term_in + term_out });
    }
    let argmin = table.iter().fold(0u32, |best, r| if r.total < table[best as usize].total { r.mask } else { best });
    Ok(BruteForce { table, argmin, pixels: n })
}
