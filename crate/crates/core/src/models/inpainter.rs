//! Flow inpainter: reconstructs the flow hidden by a mask.
//!
//! Two encoder branches of identical shape, one for the image and one for
//! the visible flow `(1 - mask) * flow` stacked with the mask itself. Their
//! deepest features are fused, passed through a residual stack of dilated
//! blocks and decoded with skips from both branches. The image branch does
//! not depend on the mask, so one encoding serves both directions of the
//! loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::net::{Net, NormUpdate};
use super::{check_input_size, check_rates, level_channels, BlockConfig, Layout, Mode, Skip};
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, SoftMask};
use crate::numerics::{Binding, Conv2dSpec, Graph, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct InpainterConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    /// Stages per encoder branch; all but the first halve the resolution.
    pub encoder_depth: usize,
    pub atrous_rates: Vec<usize>,
    pub block: BlockConfig,
}

impl Default for InpainterConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            base_channels: 16,
            encoder_depth: 3,
            atrous_rates: vec![2, 4, 8],
            block: BlockConfig::default(),
        }
    }
}

impl InpainterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("inpainter needs at least one encoder stage and one channel".into()));
        }
        check_input_size(self.height, self.width, self.encoder_depth)?;
        check_rates(&self.atrous_rates)
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let (c, d) = (self.base_channels, self.encoder_depth);
        let widen = if self.block.skip == Skip::Concat { 3 } else { 1 };
        let mut l = Layout::new(self.block);
        for branch in ["img", "flow"] {
            for level in 0..d {
                let cin = if level == 0 { 3 } else { level_channels(c, level - 1) };
                l.block(&format!("inp.{branch}.enc{level}"), cin, level_channels(c, level));
            }
        }
        let deep = level_channels(c, d - 1);
        l.block("inp.fuse", 2 * deep, deep);
        for i in 0..self.atrous_rates.len() {
            l.block(&format!("inp.atrous{i}"), deep, deep);
        }
        for level in (0..d).rev() {
            let width = level_channels(c, level);
            let cin = if level == d - 1 { width } else { width * widen };
            l.block(&format!("inp.dec{level}"), cin, level_channels(c, level.saturating_sub(1)));
        }
        l.head("inp.out", level_channels(c, 0), 2);
        Ok(l)
    }

    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        self.layout()?.build(seed)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.param_count())
    }

    /// Trainable scalars of the image and flow branches.
    pub fn branch_sizes(&self) -> Result<(usize, usize)> {
        let l = self.layout()?;
        Ok((l.trainable_count("inp.img."), l.trainable_count("inp.flow.")))
    }
}

/// Per-level features of the image branch.
#[derive(Clone, Debug)]
pub struct ImageFeatures {
    levels: Vec<Var>,
}

fn encode<S: Scalar>(net: &mut Net<'_, S>, branch: &str, input: Var, depth: usize) -> Result<Vec<Var>> {
    let mut x = input;
    let mut levels = Vec::with_capacity(depth);
    for level in 0..depth {
        let spec = if level == 0 { Conv2dSpec::same(3, 1) } else { Conv2dSpec::down(3) };
        x = net.block(&format!("inp.{branch}.enc{level}"), x, spec)?;
        levels.push(x);
    }
    Ok(levels)
}

/// Runs the image branch on `frames` (`N x 3 x H x W`).
pub fn encode_image<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    binding: &Binding,
    cfg: &InpainterConfig,
    frames: Var,
    mode: Mode,
) -> Result<(ImageFeatures, Vec<NormUpdate<S>>)> {
    cfg.validate()?;
    let (_, c, h, w) = g.value(frames).dims4("inpainter frames")?;
    if c != 3 || (h, w) != (cfg.height, cfg.width) {
        return Err(Error::shape("inpainter", format!("frames {:?} for a {}x{} network", g.shape(frames), cfg.width, cfg.height)));
    }
    let mut net = Net::new(g, store, binding, cfg.block, mode)?;
    let levels = encode(&mut net, "img", frames, cfg.encoder_depth)?;
    Ok((ImageFeatures { levels }, net.updates))
}

/// Predicts the full flow field (`N x 2 x H x W`) from the flow visible
/// outside `mask` (`N x 1 x H x W`, 1 = hidden) and the image features.
#[allow(clippy::too_many_arguments)]
pub fn inpainter_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    binding: &Binding,
    cfg: &InpainterConfig,
    image: &ImageFeatures,
    flows: Var,
    mask: Var,
    mode: Mode,
) -> Result<(Var, Vec<NormUpdate<S>>)> {
    let (n, c, h, w) = g.value(flows).dims4("inpainter flows")?;
    let (nm, cm, hm, wm) = g.value(mask).dims4("inpainter mask")?;
    if c != 2 || cm != 1 || (n, h, w) != (nm, hm, wm) {
        return Err(Error::shape("inpainter", format!("flows {:?} and mask {:?}", g.shape(flows), g.shape(mask))));
    }
    if image.levels.len() != cfg.encoder_depth || g.shape(image.levels[0])[0] != n || g.shape(image.levels[0])[2..] != [h, w] {
        return Err(Error::shape("inpainter", "image features do not match the flow batch"));
    }
    let d = cfg.encoder_depth;
    let mut net = Net::new(g, store, binding, cfg.block, mode)?;
    let visible = net.g.one_minus(mask)?;
    let visible = net.g.mul(flows, visible)?;
    let input = net.g.concat_channels(&[visible, mask])?;
    let flow_levels = encode(&mut net, "flow", input, d)?;
    let deep = net.g.concat_channels(&[image.levels[d - 1], flow_levels[d - 1]])?;
    let fused = net.block("inp.fuse", deep, Conv2dSpec::same(3, 1))?;
    let mut y = net.atrous("inp.atrous", fused, &cfg.atrous_rates)?;
    for level in (1..d).rev() {
        y = net.block(&format!("inp.dec{level}"), y, Conv2dSpec::same(3, 1))?;
        y = net.g.upsample_bilinear(y, 2)?;
        y = net.merge(y, &[flow_levels[level - 1], image.levels[level - 1]])?;
    }
    y = net.block("inp.dec0", y, Conv2dSpec::same(3, 1))?;
    let out = net.head("inp.out", y)?;
    Ok((out, net.updates))
}

/// Reconstructed flow for one frame when `mask` (1 = hidden) is hidden.
///
/// The flow is used at the scale given; training feeds flows divided by
/// their root-mean-square magnitude.
pub fn inpainter_forward(
    frame: &Frame,
    flow: &FlowField,
    mask: &SoftMask,
    params: &ParamStore,
    cfg: &InpainterConfig,
    mode: Mode,
) -> Result<FlowField> {
    if (mask.width(), mask.height()) != (flow.width(), flow.height()) {
        return Err(Error::shape("inpainter", "mask and flow sizes differ"));
    }
    let mut g = Graph::new();
    let (frames, flows) = super::stack_inputs(&mut g, &[frame], &[flow])?;
    let mut m = Vec::new();
    mask.write_planar(&mut m);
    let mask = g.constant(Tensor::new(&[1, 1, flow.height(), flow.width()], m)?)?;
    let binding = params.bind(&mut g, false)?;
    let (image, _) = encode_image(&mut g, params, &binding, cfg, frames, mode)?;
    let (out, _) = inpainter_graph(&mut g, params, &binding, cfg, &image, flows, mask, mode)?;
    FlowField::from_tensor(g.value(out), 0)
}
