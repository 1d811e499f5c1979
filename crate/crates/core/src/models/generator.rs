//! Mask generator: image and flow in, foreground probability out.
//!
//! Encoder stages (the first at full resolution, the rest stride 2), a
//! residual stack of dilated blocks at the bottleneck, and a decoder that
//! upsamples back while merging the encoder features of each resolution.
//! The head produces two logits per pixel; channel 0 of their softmax is the
//! foreground probability.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::net::{Net, NormUpdate};
use super::{check_input_size, check_rates, level_channels, normalize_flow, BlockConfig, Layout, Mode, Skip};
use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, SoftMask};
use crate::numerics::{Conv2dSpec, Graph, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
    /// Number of encoder stages; all but the first halve the resolution.
    pub encoder_depth: usize,
    pub atrous_rates: Vec<usize>,
    pub block: BlockConfig,
    /// Logits pass through `k * tanh(x / k)` before the softmax, keeping
    /// mask probabilities away from exactly 0 and 1. `None` disables it.
    pub logit_bound: Option<f64>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            base_channels: 16,
            encoder_depth: 3,
            atrous_rates: vec![2, 4, 8, 16],
            block: BlockConfig::default(),
            logit_bound: Some(2.0),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("generator needs at least one encoder stage and one channel".into()));
        }
        if let Some(k) = self.logit_bound {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Config(format!("logit bound must be positive, got {k}")));
            }
        }
        check_input_size(self.height, self.width, self.encoder_depth)?;
        check_rates(&self.atrous_rates)
    }

    pub(crate) fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let (c, d) = (self.base_channels, self.encoder_depth);
        let widen = if self.block.skip == Skip::Concat { 2 } else { 1 };
        let mut l = Layout::new(self.block);
        for level in 0..d {
            let cin = if level == 0 { 5 } else { level_channels(c, level - 1) };
            l.block(&format!("gen.enc{level}"), cin, level_channels(c, level));
        }
        let deep = level_channels(c, d - 1);
        for i in 0..self.atrous_rates.len() {
            l.block(&format!("gen.atrous{i}"), deep, deep);
        }
        for level in (0..d).rev() {
            let width = level_channels(c, level);
            let cin = if level == d - 1 { width } else { width * widen };
            let cout = level_channels(c, level.saturating_sub(1));
            l.block(&format!("gen.dec{level}"), cin, cout);
        }
        l.head("gen.out", level_channels(c, 0), 2);
        Ok(l)
    }

    /// Kaiming-initialized parameters, deterministic in `seed`.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        self.layout()?.build(seed)
    }

    /// Number of scalars (including batchnorm buffers) of the network.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.param_count())
    }
}

/// Builds the generator on `g` for a batch of `frames` (`N x 3 x H x W`) and
/// `flows` (`N x 2 x H x W`). Returns the foreground probability
/// (`N x 1 x H x W`) and, in training mode, the batch statistics of every
/// batchnorm layer.
pub fn generator_graph<S: Scalar>(
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    binding: &crate::numerics::Binding,
    cfg: &GeneratorConfig,
    frames: Var,
    flows: Var,
    mode: Mode,
) -> Result<(Var, Vec<NormUpdate<S>>)> {
    cfg.validate()?;
    let (n, c, h, w) = g.value(frames).dims4("generator frames")?;
    let (nf, cf, hf, wf) = g.value(flows).dims4("generator flows")?;
    if c != 3 || cf != 2 || (n, h, w) != (nf, hf, wf) {
        return Err(Error::shape("generator", format!("frames {:?} and flows {:?}", g.shape(frames), g.shape(flows))));
    }
    if (h, w) != (cfg.height, cfg.width) {
        return Err(Error::shape("generator", format!("input {w}x{h} but configured for {}x{}", cfg.width, cfg.height)));
    }
    let d = cfg.encoder_depth;
    let mut net = Net::new(g, store, binding, cfg.block, mode)?;
    let mut x = net.g.concat_channels(&[frames, flows])?;
    let mut skips = Vec::with_capacity(d);
    for level in 0..d {
        let spec = if level == 0 { Conv2dSpec::same(3, 1) } else { Conv2dSpec::down(3) };
        x = net.block(&format!("gen.enc{level}"), x, spec)?;
        skips.push(x);
    }
    let mut y = net.atrous("gen.atrous", x, &cfg.atrous_rates)?;
    for level in (1..d).rev() {
        y = net.block(&format!("gen.dec{level}"), y, Conv2dSpec::same(3, 1))?;
        y = net.g.upsample_bilinear(y, 2)?;
        y = net.merge(y, &[skips[level - 1]])?;
    }
    y = net.block("gen.dec0", y, Conv2dSpec::same(3, 1))?;
    let mut logits = net.head("gen.out", y)?;
    if let Some(k) = cfg.logit_bound {
        let t = net.g.scale(logits, S::of(1.0 / k))?;
        let t = net.g.tanh(t)?;
        logits = net.g.scale(t, S::of(k))?;
    }
    let probs = net.g.softmax_channels(logits)?;
    let fg = net.g.select_channel(probs, 0)?;
    Ok((fg, net.updates))
}

/// Foreground probability for one frame and its flow.
///
/// The flow is divided by its root-mean-square magnitude first, matching
/// what the network sees during training. In training mode batch statistics
/// are used and discarded.
pub fn generator_forward(
    frame: &Frame,
    flow: &FlowField,
    params: &ParamStore,
    cfg: &GeneratorConfig,
    mode: Mode,
) -> Result<SoftMask> {
    let (flow, _) = normalize_flow(flow);
    let mut g = Graph::new();
    let (frames, flows) = super::stack_inputs(&mut g, &[frame], &[&flow])?;
    let binding = params.bind(&mut g, false)?;
    let (fg, _) = generator_graph(&mut g, params, &binding, cfg, frames, flows, mode)?;
    SoftMask::from_tensor(g.value(fg), 0)
}
