//! Synthetic scenes in which foreground and background move independently.
//!
//! A scene is a textured frame, a foreground mask and a flow field that is
//! one rigid motion inside the mask and another, independently drawn, rigid
//! motion outside. Randomness is split into separate streams per concern
//! (see [`crate::rng::streams`]), so the two motions never share a
//! generator.

mod shapes;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use shapes::ShapeKind;

use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, Mask};
use crate::rng::{derive, seeded, streams};

/// Rotation by `rotation` radians about `center`, then translation by
/// `translation`, all in pixel units with `x` to the right and `y` down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMotion {
    pub rotation: f64,
    pub translation: [f64; 2],
    pub center: [f64; 2],
}

/// Displacement of every pixel under `motion`:
/// `u(x) = R(r)(x - c) + c + t - x`.
pub fn rigid_flow(motion: &RigidMotion, width: usize, height: usize) -> FlowField {
    let (s, c) = motion.rotation.sin_cos();
    let [cx, cy] = motion.center;
    let [tx, ty] = motion.translation;
    FlowField::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        let u = c * dx - s * dy + cx + tx - x as f64;
        let v = s * dx + c * dy + cy + ty - y as f64;
        [u as f32, v as f32]
    })
}

/// Where foreground rotations are centred.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionCenter {
    Image,
    /// Centroid of the foreground mask (background still uses the image
    /// center).
    MaskCentroid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionConfig {
    /// Rotations are uniform in `[-max_rotation, max_rotation]` radians.
    pub max_rotation: f64,
    /// Translations are uniform in `[-max_translation, max_translation]`
    /// pixels at `reference_width`, scaled linearly to the actual width.
    pub max_translation: f64,
    pub reference_width: f64,
    pub center: MotionCenter,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { max_rotation: 1.0, max_translation: 30.0, reference_width: 854.0, center: MotionCenter::Image }
    }
}

impl MotionConfig {
    pub fn translation_limit(&self, width: usize) -> f64 {
        self.max_translation * width as f64 / self.reference_width
    }

    pub fn sample(&self, rng: &mut impl Rng, width: usize, center: [f64; 2]) -> RigidMotion {
        let rotation = uniform(rng, self.max_rotation);
        let lim = self.translation_limit(width);
        let translation = [uniform(rng, lim), uniform(rng, lim)];
        RigidMotion { rotation, translation, center }
    }
}

fn uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeConfig {
    pub kinds: Vec<ShapeKind>,
    /// Accepted foreground area as a fraction of the frame.
    pub min_area: f64,
    pub max_area: f64,
    pub max_attempts: u32,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            kinds: vec![ShapeKind::Ellipse, ShapeKind::Polygon, ShapeKind::Blobs],
            min_area: 0.05,
            max_area: 0.6,
            max_attempts: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub shape: ShapeConfig,
    pub motion: MotionConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { width: 64, height: 64, shape: ShapeConfig::default(), motion: MotionConfig::default() }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.shape;
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("synthetic frames must be at least 2x2".into()));
        }
        if s.kinds.is_empty() || !(0.0 < s.min_area && s.min_area < s.max_area && s.max_area < 1.0) {
            return Err(Error::Config("shape area band must satisfy 0 < min < max < 1 with at least one kind".into()));
        }
        if !(0.0..=core::f64::consts::PI).contains(&self.motion.max_rotation) || self.motion.max_translation < 0.0 {
            return Err(Error::Config("rotation limit must be in [0, pi] and translation limit non-negative".into()));
        }
        Ok(())
    }
}

/// Motion parameters and provenance of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMeta {
    pub seed: u64,
    pub foreground: RigidMotion,
    pub background: RigidMotion,
    /// Frame offset the flow refers to.
    pub dt: i32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub frame: Frame,
    pub flow: FlowField,
    pub mask: Mask,
    pub meta: SceneMeta,
}

fn image_center(width: usize, height: usize) -> [f64; 2] {
    [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0]
}

fn centroid(mask: &Mask) -> [f64; 2] {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return image_center(mask.width(), mask.height());
    }
    [sx / n as f64, sy / n as f64]
}

/// Foreground flow inside `mask`, background flow outside.
pub fn composite(mask: &Mask, fg: &FlowField, bg: &FlowField) -> FlowField {
    let vectors = mask
        .bits()
        .iter()
        .zip(fg.vectors().iter().zip(bg.vectors()))
        .map(|(&m, (f, b))| if m { *f } else { *b })
        .collect();
    FlowField::new(mask.width(), mask.height(), vectors).expect("same size")
}

/// Draws independent foreground and background motions for `mask` from the
/// two motion streams of `seed`.
pub fn draw_motions(seed: u64, mask: &Mask, cfg: &MotionConfig) -> (RigidMotion, RigidMotion) {
    let (w, h) = (mask.width(), mask.height());
    let fg_center = match cfg.center {
        MotionCenter::Image => image_center(w, h),
        MotionCenter::MaskCentroid => centroid(mask),
    };
    let fg = cfg.sample(&mut seeded(seed, streams::FOREGROUND_MOTION), w, fg_center);
    let bg = cfg.sample(&mut seeded(seed, streams::BACKGROUND_MOTION), w, image_center(w, h));
    (fg, bg)
}

/// Rasterizes a foreground shape whose area lies in the configured band.
pub fn draw_mask(seed: u64, cfg: &SynthConfig) -> Result<Mask> {
    cfg.validate()?;
    let mut rng = seeded(seed, streams::SHAPE);
    for _ in 0..cfg.shape.max_attempts {
        let mask = shapes::draw_shape(&mut rng, &cfg.shape.kinds, cfg.width, cfg.height);
        let area = mask.area_fraction();
        if area >= cfg.shape.min_area && area <= cfg.shape.max_area {
            return Ok(mask);
        }
    }
    Err(Error::DegenerateShape(cfg.shape.max_attempts))
}

/// One ideal-conditions scene: a random shape on a textured frame, moving
/// rigidly and independently of the background.
pub fn gen_ideal_sample(seed: u64, cfg: &SynthConfig) -> Result<SceneSample> {
    let mask = draw_mask(seed, cfg)?;
    let frame = shapes::textured_frame(&mut seeded(seed, streams::TEXTURE), &mask);
    let (foreground, background) = draw_motions(seed, &mask, &cfg.motion);
    let flow = composite(
        &mask,
        &rigid_flow(&foreground, cfg.width, cfg.height),
        &rigid_flow(&background, cfg.width, cfg.height),
    );
    Ok(SceneSample { frame, flow, mask, meta: SceneMeta { seed, foreground, background, dt: 1 } })
}

/// Redraws both motions of a scene from `seed`, keeping frame and mask.
pub fn redraw_motion(sample: &SceneSample, seed: u64, cfg: &MotionConfig) -> SceneSample {
    let (w, h) = (sample.mask.width(), sample.mask.height());
    let (foreground, background) = draw_motions(seed, &sample.mask, cfg);
    let flow = composite(&sample.mask, &rigid_flow(&foreground, w, h), &rigid_flow(&background, w, h));
    SceneSample {
        frame: sample.frame.clone(),
        flow,
        mask: sample.mask.clone(),
        meta: SceneMeta { seed, foreground, background, dt: sample.meta.dt },
    }
}

/// Adds an independently drawn rigid flow to the foreground of `flow` and
/// another to its background.
pub fn perturb_with_gt(flow: &FlowField, gt: &Mask, seed: u64, cfg: &MotionConfig) -> Result<FlowField> {
    if !gt.same_size(flow.width(), flow.height()) {
        return Err(Error::shape("perturb_with_gt", "mask and flow sizes differ"));
    }
    let (w, h) = (flow.width(), flow.height());
    let (fg, bg) = draw_motions(seed, gt, cfg);
    let extra = composite(gt, &rigid_flow(&fg, w, h), &rigid_flow(&bg, w, h));
    let vectors = flow
        .vectors()
        .iter()
        .zip(extra.vectors())
        .map(|(a, b)| [a[0] + b[0], a[1] + b[1]])
        .collect();
    FlowField::new(w, h, vectors)
}

/// Adds zero-mean Gaussian noise with standard deviation
/// `relative * rms(flow)` to every flow component.
pub fn add_flow_noise(flow: &FlowField, relative: f64, seed: u64) -> FlowField {
    let sigma = relative * flow.rms();
    let mut out = flow.clone();
    if !(sigma > 0.0) {
        return out;
    }
    let dist = Normal::new(0.0, sigma).expect("positive sigma");
    let mut rng = seeded(seed, streams::NOISE);
    for v in out.vectors_mut() {
        v[0] += dist.sample(&mut rng) as f32;
        v[1] += dist.sample(&mut rng) as f32;
    }
    out
}

/// One frame of a synthetic sequence and its flows to neighbouring frames.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceFrame {
    pub frame: Frame,
    pub mask: Mask,
    /// `(dt, flow)` pairs.
    pub flows: Vec<(i32, FlowField)>,
}

/// A short clip: one shape drifting across the frame, with an independent
/// rigid motion pair and additive noise for every frame offset.
pub fn gen_sequence(seed: u64, frames: usize, dts: &[i32], noise: f64, cfg: &SynthConfig) -> Result<Vec<SequenceFrame>> {
    let base = draw_mask(seed, cfg)?;
    let texture_seed = derive(seed, u64::MAX);
    let mut drift = seeded(seed, streams::SHAPE + 16);
    let step = [drift.random_range(-1.0..=1.0f64), drift.random_range(-1.0..=1.0f64)];
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let (ox, oy) = ((step[0] * k as f64).round() as isize, (step[1] * k as f64).round() as isize);
        let mask = Mask::from_fn(cfg.width, cfg.height, |x, y| {
            let (sx, sy) = (x as isize - ox, y as isize - oy);
            sx >= 0 && sy >= 0 && (sx as usize) < cfg.width && (sy as usize) < cfg.height && base.get(sx as usize, sy as usize)
        });
        if mask.count() == 0 {
            return Err(Error::DegenerateShape(1));
        }
        let frame = shapes::textured_frame(&mut seeded(texture_seed, streams::TEXTURE), &mask);
        let mut flows = Vec::with_capacity(dts.len());
        for (j, &dt) in dts.iter().enumerate() {
            let s = derive(derive(seed, k as u64), j as u64);
            let (fg, bg) = draw_motions(s, &mask, &cfg.motion);
            let clean = composite(&mask, &rigid_flow(&fg, cfg.width, cfg.height), &rigid_flow(&bg, cfg.width, cfg.height));
            flows.push((dt, add_flow_noise(&clean, noise, s)));
        }
        out.push(SequenceFrame { frame, mask, flows });
    }
    Ok(out)
}

/// Pearson correlation, per component, between the mean foreground flow
/// and the mean background flow over `n` scenes.
pub fn motion_correlation(samples: &[SceneSample]) -> [f64; 2] {
    let means: Vec<([f64; 2], [f64; 2])> = samples
        .iter()
        .map(|s| {
            let (mut f, mut b, mut nf, mut nb) = ([0.0; 2], [0.0; 2], 0.0, 0.0);
            for (&m, v) in s.mask.bits().iter().zip(s.flow.vectors()) {
                let (acc, n) = if m { (&mut f, &mut nf) } else { (&mut b, &mut nb) };
                acc[0] += v[0] as f64;
                acc[1] += v[1] as f64;
                *n += 1.0;
            }
            ([f[0] / nf, f[1] / nf], [b[0] / nb, b[1] / nb])
        })
        .collect();
    let mut out = [0.0; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let xs: Vec<f64> = means.iter().map(|m| m.0[c]).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.1[c]).collect();
        *slot = pearson(&xs, &ys);
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motion(r: f64, t: [f64; 2], c: [f64; 2]) -> RigidMotion {
        RigidMotion { rotation: r, translation: t, center: c }
    }

    #[test]
    fn translation_is_constant_flow() {
        let f = rigid_flow(&motion(0.0, [5.0, 0.0], [3.0, 3.0]), 8, 6);
        assert!(f.vectors().iter().all(|v| *v == [5.0, 0.0]));
        let z = rigid_flow(&motion(0.0, [0.0, 0.0], [3.0, 3.0]), 8, 6);
        assert!(z.vectors().iter().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn rotation_about_origin() {
        let f = rigid_flow(&motion(0.1, [0.0, 0.0], [0.0, 0.0]), 11, 1);
        let v = f.at(10, 0);
        let expect = [10.0 * (0.1f64.cos() - 1.0), 10.0 * 0.1f64.sin()];
        assert!((v[0] as f64 - expect[0]).abs() < 1e-5);
        assert!((v[1] as f64 - expect[1]).abs() < 1e-5);
        assert!((v[0] + 0.0500).abs() < 1e-4 && (v[1] - 0.9983).abs() < 1e-4);
    }

    #[test]
    fn samples_are_reproducible() {
        let cfg = SynthConfig { width: 32, height: 32, ..SynthConfig::default() };
        assert_eq!(gen_ideal_sample(9, &cfg).unwrap(), gen_ideal_sample(9, &cfg).unwrap());
        assert_ne!(gen_ideal_sample(9, &cfg).unwrap().flow, gen_ideal_sample(10, &cfg).unwrap().flow);
    }

    #[test]
    fn foreground_flow_is_the_foreground_motion() {
        let cfg = SynthConfig { width: 32, height: 24, ..SynthConfig::default() };
        for seed in 0..10 {
            let s = gen_ideal_sample(seed, &cfg).unwrap();
            let fg = rigid_flow(&s.meta.foreground, 32, 24);
            let bg = rigid_flow(&s.meta.background, 32, 24);
            for (i, &m) in s.mask.bits().iter().enumerate() {
                let want = if m { fg.vectors()[i] } else { bg.vectors()[i] };
                assert_eq!(s.flow.vectors()[i], want);
            }
        }
    }

    #[test]
    fn area_and_magnitude_bounds_hold() {
        let cfg = SynthConfig { width: 48, height: 32, ..SynthConfig::default() };
        let diag = ((48.0f64).powi(2) + (32.0f64).powi(2)).sqrt();
        let tmax = cfg.motion.translation_limit(48) * 2f64.sqrt();
        for seed in 0..40 {
            let s = gen_ideal_sample(seed, &cfg).unwrap();
            let a = s.mask.area_fraction();
            assert!((0.05..=0.6).contains(&a), "{a}");
            assert!(s.flow.is_finite());
            let r = s.meta.foreground.rotation.abs().max(s.meta.background.rotation.abs());
            assert!(s.flow.max_magnitude() <= tmax + r * diag + 1e-3);
        }
    }

    #[test]
    fn zero_flow_perturbation_is_pure_rigid_composite() {
        let mask = Mask::from_fn(16, 16, |x, y| (x as f64 - 7.5).powi(2) + (y as f64 - 7.5).powi(2) < 20.0);
        let cfg = MotionConfig::default();
        let out = perturb_with_gt(&FlowField::zeros(16, 16), &mask, 4, &cfg).unwrap();
        let (fg, bg) = draw_motions(4, &mask, &cfg);
        assert_eq!(out, composite(&mask, &rigid_flow(&fg, 16, 16), &rigid_flow(&bg, 16, 16)));

        let base = FlowField::from_fn(16, 16, |_, _| [1.5, -0.5]);
        let out = perturb_with_gt(&base, &mask, 4, &cfg).unwrap();
        let (f, b) = (rigid_flow(&fg, 16, 16), rigid_flow(&bg, 16, 16));
        for i in 0..256 {
            let add = if mask.bits()[i] { f.vectors()[i] } else { b.vectors()[i] };
            assert_eq!(out.vectors()[i], [1.5 + add[0], -0.5 + add[1]]);
        }
    }

    #[test]
    fn motions_are_uncorrelated() {
        let cfg = SynthConfig { width: 32, height: 32, ..SynthConfig::default() };
        let samples: Vec<SceneSample> = (0..1000).map(|i| gen_ideal_sample(derive(77, i), &cfg).unwrap()).collect();
        let r = motion_correlation(&samples);
        assert!(r[0].abs() <= 0.05 && r[1].abs() <= 0.05, "{r:?}");

        let mask = Mask::from_fn(32, 32, |x, y| x > 10 && x < 22 && y > 8 && y < 20);
        let perturbed: Vec<SceneSample> = (0..1000)
            .map(|i| {
                let flow = perturb_with_gt(&FlowField::zeros(32, 32), &mask, derive(78, i), &cfg.motion).unwrap();
                let frame = Frame::new(32, 32, vec![[0.0; 3]; 1024]).unwrap();
                let m = RigidMotion { rotation: 0.0, translation: [0.0; 2], center: [0.0; 2] };
                SceneSample { frame, flow, mask: mask.clone(), meta: SceneMeta { seed: i, foreground: m, background: m, dt: 1 } }
            })
            .collect();
        let r = motion_correlation(&perturbed);
        assert!(r[0].abs() <= 0.05 && r[1].abs() <= 0.05, "{r:?}");
    }

    #[test]
    fn noise_scales_with_flow() {
        let f = FlowField::from_fn(32, 32, |x, _| [x as f32, 1.0]);
        let noisy = add_flow_noise(&f, 0.2, 3);
        let diff: f64 = noisy
            .vectors()
            .iter()
            .zip(f.vectors())
            .map(|(a, b)| ((a[0] - b[0]) as f64).powi(2) + ((a[1] - b[1]) as f64).powi(2))
            .sum::<f64>()
            / (2.0 * 1024.0);
        let sigma = diff.sqrt();
        assert!((sigma / (0.2 * f.rms()) - 1.0).abs() < 0.1, "{sigma}");
        assert_eq!(add_flow_noise(&f, 0.0, 3), f);
    }

    #[test]
    fn sequences_have_every_offset() {
        let cfg = SynthConfig { width: 32, height: 32, ..SynthConfig::default() };
        let dts: Vec<i32> = (-5..=5).filter(|&d| d != 0).collect();
        let seq = gen_sequence(5, 10, &dts, 0.2, &cfg).unwrap();
        assert_eq!(seq.len(), 10);
        for f in &seq {
            assert_eq!(f.flows.len(), 10);
            assert!(f.mask.count() > 0);
        }
        assert_eq!(seq, gen_sequence(5, 10, &dts, 0.2, &cfg).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig::default();
        cfg.shape.min_area = 0.7;
        assert!(cfg.validate().is_err());
        let mut cfg = SynthConfig::default();
        cfg.shape.min_area = 0.59;
        cfg.shape.max_area = 0.6;
        cfg.shape.max_attempts = 1;
        cfg.shape.kinds = vec![ShapeKind::Ellipse];
        // an unreachable band exhausts the attempts
        let failures = (0..10).filter(|&s| draw_mask(s, &cfg).is_err()).count();
        assert!(failures > 0);
    }
}
