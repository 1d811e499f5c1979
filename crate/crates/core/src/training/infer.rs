//! Inference: temporal averaging of generator outputs.

use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, Mask, SoftMask};
use crate::models::{generator_forward, GeneratorConfig, Mode};
use crate::numerics::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferConfig {
    /// Pixels with averaged probability `>= threshold` are foreground.
    pub threshold: f32,
    pub border_orientation: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { threshold: 0.5, border_orientation: true }
    }
}

impl InferConfig {
    /// Applies the orientation rule (if enabled) and binarizes.
    pub fn finish(&self, soft: SoftMask) -> (SoftMask, Mask) {
        let mut hard = soft.binarize(self.threshold);
        if self.border_orientation && orient_by_border(&hard) {
            let flipped = soft.complement();
            hard = flipped.binarize(self.threshold);
            return (flipped, hard);
        }
        (soft, hard)
    }
}

/// Whether `mask` should be complemented: true when more than half of the
/// pixels on the frame border are foreground.
///
/// The loss is symmetric under swapping a region with its complement, so
/// which side a trained generator labels as foreground is arbitrary; the
/// moving object is taken to be the side that touches less of the border.
pub fn orient_by_border(mask: &Mask) -> bool {
    let (w, h) = (mask.width(), mask.height());
    let mut border = 0usize;
    let mut fg = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                border += 1;
                fg += mask.get(x, y) as usize;
            }
        }
    }
    2 * fg > border
}

/// Averages the generator's foreground probability over the flows to
/// several neighbouring frames and binarizes the mean. With the border rule
/// on, each map is oriented before averaging so that a label swap between
/// offsets does not cancel out.
pub fn infer(
    frame: &Frame,
    flows: &[&FlowField],
    params: &ParamStore,
    cfg: &GeneratorConfig,
    infer: &InferConfig,
) -> Result<(SoftMask, Mask)> {
    let maps = flows
        .iter()
        .map(|f| generator_forward(frame, f, params, cfg, Mode::Eval))
        .collect::<Result<alloc::vec::Vec<_>>>()?;
    combine(maps, infer)
}

/// Orients (if enabled) and averages per-offset maps, then binarizes.
pub fn combine(maps: alloc::vec::Vec<SoftMask>, infer: &InferConfig) -> Result<(SoftMask, Mask)> {
    let maps: alloc::vec::Vec<SoftMask> =
        if infer.border_orientation { maps.into_iter().map(|m| infer.finish(m).0).collect() } else { maps };
    Ok(infer.finish(average(&maps)?))
}

/// Pixelwise arithmetic mean of probability maps.
pub fn average(maps: &[SoftMask]) -> Result<SoftMask> {
    let first = maps.first().ok_or_else(|| Error::Invalid("at least one flow is required".into()))?;
    let (w, h) = (first.width(), first.height());
    if maps.iter().any(|m| (m.width(), m.height()) != (w, h)) {
        return Err(Error::shape("average", "probability maps differ in size"));
    }
    let n = maps.len() as f64;
    let probs = (0..w * h).map(|i| (maps.iter().map(|m| m.probs()[i] as f64).sum::<f64>() / n) as f32).collect();
    SoftMask::new(w, h, probs)
}
