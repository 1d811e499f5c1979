//! Foreground shapes and frame textures.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::field::{Frame, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Ellipse,
    Polygon,
    /// Union of one to three thresholded noisy bumps.
    Blobs,
}

/// Bilinearly upsampled `cells x cells` grid of uniform values in `[0, 1)`.
pub(crate) struct SmoothField {
    cells: usize,
    values: Vec<f64>,
}

impl SmoothField {
    pub fn new(rng: &mut impl Rng, cells: usize) -> Self {
        let values = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
        Self { cells, values }
    }

    /// Value at normalized coordinates `(u, v)` in `[0, 1]`.
    pub fn at(&self, u: f64, v: f64) -> f64 {
        let k = self.cells - 1;
        let (fx, fy) = (u.clamp(0.0, 1.0) * k as f64, v.clamp(0.0, 1.0) * k as f64);
        let (x0, y0) = ((fx.floor() as usize).min(k), (fy.floor() as usize).min(k));
        let (x1, y1) = ((x0 + 1).min(k), (y0 + 1).min(k));
        let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
        let g = |x: usize, y: usize| self.values[y * self.cells + x];
        let top = g(x0, y0) * (1.0 - ax) + g(x1, y0) * ax;
        let bot = g(x0, y1) * (1.0 - ax) + g(x1, y1) * ax;
        top * (1.0 - ay) + bot * ay
    }
}

fn ellipse(rng: &mut impl Rng, w: usize, h: usize) -> Mask {
    let s = w.min(h) as f64;
    let cx = rng.random_range(0.25..0.75) * w as f64;
    let cy = rng.random_range(0.25..0.75) * h as f64;
    let a = rng.random_range(0.12..0.4) * s;
    let b = rng.random_range(0.12..0.4) * s;
    let th = rng.random_range(0.0..core::f64::consts::PI);
    let (c, sn) = (th.cos(), th.sin());
    Mask::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let u = dx * c + dy * sn;
        let v = -dx * sn + dy * c;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}

/// Star-shaped polygon: vertices at sorted random angles around a center.
fn polygon(rng: &mut impl Rng, w: usize, h: usize) -> Mask {
    let s = w.min(h) as f64;
    let cx = rng.random_range(0.3..0.7) * w as f64;
    let cy = rng.random_range(0.3..0.7) * h as f64;
    let n = rng.random_range(3..9usize);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..core::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let pts: Vec<(f64, f64)> = angles
        .iter()
        .map(|&t| {
            let r = rng.random_range(0.15..0.4) * s;
            (cx + r * t.cos(), cy + r * t.sin())
        })
        .collect();
    Mask::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64, y as f64);
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = pts[i];
            let (xj, yj) = pts[j];
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    })
}

fn blobs(rng: &mut impl Rng, w: usize, h: usize) -> Mask {
    let s = w.min(h) as f64;
    let count = rng.random_range(1..4usize);
    let mut bits = alloc::vec![false; w * h];
    for _ in 0..count {
        let cx = rng.random_range(0.2..0.8) * w as f64;
        let cy = rng.random_range(0.2..0.8) * h as f64;
        let sigma = rng.random_range(0.08..0.2) * s;
        let noise = SmoothField::new(rng, 5);
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let bump = (-d2 / (2.0 * sigma * sigma)).exp();
                let n = noise.at(x as f64 / (w - 1).max(1) as f64, y as f64 / (h - 1).max(1) as f64);
                if bump + 0.35 * (2.0 * n - 1.0) > 0.5 {
                    bits[y * w + x] = true;
                }
            }
        }
    }
    Mask::new(w, h, bits).expect("sized above")
}

pub(crate) fn draw_shape(rng: &mut impl Rng, kinds: &[ShapeKind], w: usize, h: usize) -> Mask {
    match kinds[rng.random_range(0..kinds.len())] {
        ShapeKind::Ellipse => ellipse(rng, w, h),
        ShapeKind::Polygon => polygon(rng, w, h),
        ShapeKind::Blobs => blobs(rng, w, h),
    }
}

/// Low-frequency colour background with a striped, differently coloured
/// figure where `mask` is set.
pub(crate) fn textured_frame(rng: &mut impl Rng, mask: &Mask) -> Frame {
    let (w, h) = (mask.width(), mask.height());
    let bg: Vec<SmoothField> = (0..3).map(|_| SmoothField::new(rng, 4)).collect();
    let fg: Vec<SmoothField> = (0..3).map(|_| SmoothField::new(rng, 4)).collect();
    let freq = rng.random_range(0.3..1.0);
    let angle = rng.random_range(0.0..core::f64::consts::PI);
    let phase = rng.random_range(0.0..core::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / (w - 1).max(1) as f64, y as f64 / (h - 1).max(1) as f64);
            let px = if mask.get(x, y) {
                let stripe = if ((x as f64 * ca + y as f64 * sa) * freq + phase).sin() > 0.0 { 0.5 } else { 0.0 };
                [0, 1, 2].map(|c| (0.5 * fg[c].at(u, v) + stripe) as f32)
            } else {
                [0, 1, 2].map(|c| bg[c].at(u, v) as f32)
            };
            pixels.push(px);
        }
    }
    Frame::new(w, h, pixels).expect("sized above")
}
