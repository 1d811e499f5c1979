//! The adversarial game: loss, alternating updates, the training loop and
//! inference.
//!
//! The inpainter descends on the total loss with the generator frozen; the
//! generator then ascends on it with the inpainter frozen. Flows are divided
//! by their root-mean-square magnitude before entering either network.

mod infer;
mod loss;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;

pub use infer::{combine, infer, orient_by_border, InferConfig};
pub use loss::{loss_graph, masked_ratio_loss, LossBreakdown, LossVars};

use crate::error::{Error, Result};
use crate::field::{FlowField, Frame, Mask, SoftMask};
use crate::models::{
    apply_norm_updates, encode_image, generator_graph, inpainter_graph, normalize_flow, stack_inputs, GeneratorConfig,
    InpainterConfig, Mode,
};
use crate::numerics::{Adam, Graph, ParamStore, Scalar, Tensor, Var};
use crate::rng::{derive, seeded};
use crate::synth::{draw_mask, redraw_motion, SceneSample, SynthConfig};

/// Where the inpainter's masks come from during warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarmupMasks {
    /// The (untrained) generator's own soft masks.
    Generator,
    /// Independently drawn random shapes, unrelated to the scene.
    RandomShapes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub inpainter: InpainterConfig,
    pub eps: f64,
    pub lr_inpainter: f64,
    pub lr_generator: f64,
    pub steps_inpainter_per_generator: usize,
    pub batch_size: usize,
    /// Number of generator updates.
    pub total_steps: usize,
    /// Inpainter-only updates before the first generator update.
    pub warmup_steps: usize,
    pub warmup_masks: WarmupMasks,
    /// After warm-up, chance that an inpainter update uses random-shape
    /// masks instead of the generator's.
    pub random_mask_fraction: f64,
    /// Redraw both rigid motions of every scene each time it is batched,
    /// using its stored mask. Needs masks in the data.
    pub resample_motion: bool,
    /// Shape and motion ranges for redrawn motions and random masks.
    pub synth: SynthConfig,
    pub seed: u64,
    /// Inclusive frame offsets used for flow pairing; 0 is always skipped.
    pub delta_t_range: (i32, i32),
    pub binarize_threshold: f32,
    /// Complement predictions whose border is mostly foreground.
    pub border_orientation: bool,
    /// Generator steps between checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Generator steps between training-set Jaccard evaluations (0 = never).
    pub train_j_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            inpainter: InpainterConfig::default(),
            eps: 1e-6,
            lr_inpainter: 1e-4,
            lr_generator: 1e-4,
            steps_inpainter_per_generator: 1,
            batch_size: 8,
            total_steps: 4000,
            warmup_steps: 200,
            warmup_masks: WarmupMasks::RandomShapes,
            random_mask_fraction: 0.3,
            resample_motion: true,
            synth: SynthConfig::default(),
            seed: 0,
            delta_t_range: (-5, 5),
            binarize_threshold: 0.5,
            border_orientation: true,
            checkpoint_every: 1000,
            train_j_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.inpainter.validate()?;
        if (self.generator.height, self.generator.width) != (self.inpainter.height, self.inpainter.width) {
            return Err(Error::Config("generator and inpainter must share one input size".into()));
        }
        if !(self.eps > 0.0) || !(self.lr_inpainter > 0.0) || !(self.lr_generator > 0.0) {
            return Err(Error::Config("eps and learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.steps_inpainter_per_generator == 0 {
            return Err(Error::Config("batch size and inpainter step ratio must be at least 1".into()));
        }
        let (lo, hi) = self.delta_t_range;
        if lo > hi || (lo == 0 && hi == 0) {
            return Err(Error::Config(format!("frame offset range [{lo}, {hi}] has no nonzero offset")));
        }
        if !(0.0..=1.0).contains(&self.random_mask_fraction) {
            return Err(Error::Config("random mask fraction must lie in [0, 1]".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config("threshold must lie in (0, 1)".into()));
        }
        self.synth.validate()
    }

    /// Nonzero offsets of `delta_t_range` in increasing order.
    pub fn offsets(&self) -> Vec<i32> {
        (self.delta_t_range.0..=self.delta_t_range.1).filter(|&d| d != 0).collect()
    }

    pub fn infer_config(&self) -> InferConfig {
        InferConfig { threshold: self.binarize_threshold, border_orientation: self.border_orientation }
    }
}

/// Parameters of both players and their optimizers' state.
#[derive(Clone, Debug, PartialEq)]
pub struct Players {
    pub generator: ParamStore,
    pub inpainter: ParamStore,
}

impl Players {
    /// Fresh parameters, both derived from `seed`.
    pub fn init(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            generator: cfg.generator.init_params(derive(cfg.seed, 1))?,
            inpainter: cfg.inpainter.init_params(derive(cfg.seed, 2))?,
        })
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    /// 1-based generator step.
    pub step: usize,
    pub loss: LossBreakdown,
    /// Mean Jaccard of the batch predictions against the stored masks.
    pub train_j: Option<f64>,
}

/// A batch prepared for the networks: frames and normalized flows.
pub struct Batch<'a> {
    pub frames: Vec<&'a Frame>,
    pub flows: Vec<FlowField>,
    pub masks: Vec<Option<&'a Mask>>,
}

impl<'a> Batch<'a> {
    /// Normalizes every flow by its root-mean-square magnitude.
    pub fn new(frames: Vec<&'a Frame>, flows: &[&FlowField], masks: Vec<Option<&'a Mask>>) -> Result<Self> {
        if frames.is_empty() || frames.len() != flows.len() || frames.len() != masks.len() {
            return Err(Error::Invalid("batch needs matching, nonempty frames, flows and masks".into()));
        }
        let flows = flows.iter().map(|f| normalize_flow(f).0).collect();
        Ok(Self { frames, flows, masks })
    }

    pub fn from_samples(samples: &'a [SceneSample]) -> Result<Self> {
        let frames = samples.iter().map(|s| &s.frame).collect();
        let flows: Vec<&FlowField> = samples.iter().map(|s| &s.flow).collect();
        Self::new(frames, &flows, samples.iter().map(|s| Some(&s.mask)).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn mask_tensor<S: Scalar>(masks: &[SoftMask]) -> Result<Tensor<S>> {
    let (w, h) = (masks[0].width(), masks[0].height());
    let mut data = Vec::with_capacity(masks.len() * w * h);
    for m in masks {
        if (m.width(), m.height()) != (w, h) {
            return Err(Error::shape("mask batch", "masks differ in size"));
        }
        m.write_planar(&mut data);
    }
    Tensor::new(&[masks.len(), 1, h, w], data)
}

/// Which player a forward pass prepares gradients for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Player {
    Generator,
    Inpainter,
    Neither,
}

struct Pass<S: Scalar> {
    g: Graph<S>,
    loss: LossVars,
    mask: Var,
    gen_binding: crate::numerics::Binding,
    inp_binding: crate::numerics::Binding,
    gen_updates: Vec<crate::models::NormUpdate<S>>,
    inp_updates: Vec<crate::models::NormUpdate<S>>,
}

/// Forward pass of both networks and the loss. With `fixed` masks the
/// generator is skipped and those masks are used instead.
fn forward<S: Scalar>(
    cfg: &TrainConfig,
    gen: &ParamStore<S>,
    inp: &ParamStore<S>,
    batch: &Batch<'_>,
    fixed: Option<&[SoftMask]>,
    learner: Player,
) -> Result<Pass<S>> {
    let mut g = Graph::new();
    let flow_refs: Vec<&FlowField> = batch.flows.iter().collect();
    let (frames, flows) = stack_inputs(&mut g, &batch.frames, &flow_refs)?;
    let gen_binding = gen.bind(&mut g, learner == Player::Generator)?;
    let inp_binding = inp.bind(&mut g, learner == Player::Inpainter)?;
    let (mask, gen_updates) = match fixed {
        Some(masks) => (g.constant(mask_tensor(masks)?)?, Vec::new()),
        None => generator_graph(&mut g, gen, &gen_binding, &cfg.generator, frames, flows, Mode::Train)?,
    };
    let (image, mut inp_updates) = encode_image(&mut g, inp, &inp_binding, &cfg.inpainter, frames, Mode::Train)?;
    let (recon_in, u1) = inpainter_graph(&mut g, inp, &inp_binding, &cfg.inpainter, &image, flows, mask, Mode::Train)?;
    let outside = g.one_minus(mask)?;
    let (recon_out, u2) = inpainter_graph(&mut g, inp, &inp_binding, &cfg.inpainter, &image, flows, outside, Mode::Train)?;
    inp_updates.extend(u1);
    inp_updates.extend(u2);
    let loss = loss_graph(&mut g, flows, mask, recon_in, recon_out, cfg.eps)?;
    Ok(Pass { g, loss, mask, gen_binding, inp_binding, gen_updates, inp_updates })
}

fn guard(step: u64, loss: &LossBreakdown) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { step, value: loss.total })
    }
}

/// One inpainter update that decreases the loss with the generator frozen.
/// Returns the loss before the update.
pub fn inpainter_step(
    batch: &Batch<'_>,
    players: &mut Players,
    cfg: &TrainConfig,
    fixed: Option<&[SoftMask]>,
) -> Result<LossBreakdown> {
    let mut pass = forward(cfg, &players.generator, &players.inpainter, batch, fixed, Player::Inpainter)
        .map_err(|e| diverged_or(e, players.inpainter.step))?;
    let loss = pass.loss.breakdown(&pass.g);
    guard(players.inpainter.step, &loss)?;
    pass.g.backward(pass.loss.total)?;
    players.inpainter.load_grads(&pass.g, &pass.inp_binding)?;
    Adam::with_lr(cfg.lr_inpainter).step(&mut players.inpainter)?;
    apply_norm_updates(&mut players.inpainter, &pass.inp_updates, cfg.inpainter.block.bn_momentum)?;
    Ok(loss)
}

/// Generator masks produced while taking a generator step.
pub struct GeneratorOutput {
    pub loss: LossBreakdown,
    pub masks: Vec<SoftMask>,
}

/// One generator update that increases the loss with the inpainter frozen.
/// Returns the loss and masks before the update.
pub fn generator_step(batch: &Batch<'_>, players: &mut Players, cfg: &TrainConfig) -> Result<GeneratorOutput> {
    let mut pass = forward(cfg, &players.generator, &players.inpainter, batch, None, Player::Generator)
        .map_err(|e| diverged_or(e, players.generator.step))?;
    let loss = pass.loss.breakdown(&pass.g);
    guard(players.generator.step, &loss)?;
    let ascent = pass.g.neg(pass.loss.total)?;
    pass.g.backward(ascent)?;
    players.generator.load_grads(&pass.g, &pass.gen_binding)?;
    Adam::with_lr(cfg.lr_generator).step(&mut players.generator)?;
    apply_norm_updates(&mut players.generator, &pass.gen_updates, cfg.generator.block.bn_momentum)?;
    let masks = (0..batch.len()).map(|i| SoftMask::from_tensor(pass.g.value(pass.mask), i)).collect::<Result<_>>()?;
    Ok(GeneratorOutput { loss, masks })
}

fn diverged_or(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { step, value: f64::NAN },
        other => other,
    }
}

/// `ratio` inpainter updates followed by one generator update. Returns the
/// loss the generator step saw. `fixed` replaces the generator's masks in
/// the inpainter updates.
pub fn adversarial_step(batch: &Batch<'_>, players: &mut Players, cfg: &TrainConfig, fixed: Option<&[SoftMask]>) -> Result<GeneratorOutput> {
    for _ in 0..cfg.steps_inpainter_per_generator {
        inpainter_step(batch, players, cfg, fixed)?;
    }
    generator_step(batch, players, cfg)
}

/// Callback invoked with the generator step count and both players.
pub type CheckpointFn<'a> = dyn FnMut(usize, &Players) -> Result<()> + 'a;

/// Parameters after training and one history row per generator step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub players: Players,
    pub history: Vec<HistoryRow>,
}

/// Seeded, epoch-wise shuffled mini-batch indices.
struct Sampler {
    seed: u64,
    len: usize,
    batch: usize,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    fn new(seed: u64, len: usize, batch: usize) -> Self {
        Self { seed, len, batch, epoch: 0, order: Vec::new(), cursor: usize::MAX }
    }

    fn next(&mut self) -> Vec<usize> {
        if self.cursor.saturating_add(self.batch) > self.len {
            self.order = (0..self.len).collect();
            self.order.shuffle(&mut seeded(derive(self.seed, self.epoch), 7));
            self.epoch += 1;
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// Trains both players on `samples`.
///
/// Every update (warm-up or adversarial) consumes one shuffled batch.
pub fn train(samples: &[SceneSample], cfg: &TrainConfig, checkpoint: &mut CheckpointFn<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.len() < cfg.batch_size {
        return Err(Error::Invalid(format!("{} samples for batch size {}", samples.len(), cfg.batch_size)));
    }
    let mut players = Players::init(cfg)?;
    let mut history = Vec::with_capacity(cfg.total_steps);
    let mut sampler = Sampler::new(derive(cfg.seed, 3), samples.len(), cfg.batch_size);
    let mut mix_rng = seeded(derive(cfg.seed, 6), 0);
    for step in 0..cfg.warmup_steps + cfg.total_steps {
        let chosen = gather(samples, &sampler.next(), cfg, step)?;
        let batch = Batch::from_samples(&chosen)?;
        if step < cfg.warmup_steps {
            let fixed = match cfg.warmup_masks {
                WarmupMasks::Generator => None,
                WarmupMasks::RandomShapes => Some(random_masks(cfg, step, batch.len())?),
            };
            inpainter_step(&batch, &mut players, cfg, fixed.as_deref())?;
            continue;
        }
        let mixed = if mix_rng.random::<f64>() < cfg.random_mask_fraction { Some(random_masks(cfg, step, batch.len())?) } else { None };
        let out = adversarial_step(&batch, &mut players, cfg, mixed.as_deref())?;
        let gen_step = step + 1 - cfg.warmup_steps;
        let train_j = if cfg.train_j_every > 0 && gen_step % cfg.train_j_every == 0 {
            batch_jaccard(&out.masks, &batch, cfg.infer_config())?
        } else {
            None
        };
        history.push(HistoryRow { step: gen_step, loss: out.loss, train_j });
        if cfg.checkpoint_every > 0 && gen_step % cfg.checkpoint_every == 0 {
            checkpoint(gen_step, &players)?;
        }
    }
    Ok(TrainOutcome { players, history })
}

fn gather(samples: &[SceneSample], idx: &[usize], cfg: &TrainConfig, step: usize) -> Result<Vec<SceneSample>> {
    idx.iter()
        .enumerate()
        .map(|(k, &i)| {
            let s = &samples[i];
            if (s.frame.width(), s.frame.height()) != (cfg.generator.width, cfg.generator.height) {
                return Err(Error::shape("train", format!("sample {i} is {}x{}", s.frame.width(), s.frame.height())));
            }
            Ok(if cfg.resample_motion {
                redraw_motion(s, derive(derive(cfg.seed, 4), (step * cfg.batch_size + k) as u64), &cfg.synth.motion)
            } else {
                s.clone()
            })
        })
        .collect()
}

fn random_masks(cfg: &TrainConfig, step: usize, n: usize) -> Result<Vec<SoftMask>> {
    let synth = SynthConfig { width: cfg.generator.width, height: cfg.generator.height, ..cfg.synth.clone() };
    (0..n)
        .map(|k| draw_mask(derive(derive(cfg.seed, 5), (step * n + k) as u64), &synth).map(|m| SoftMask::from_mask(&m)))
        .collect()
}

fn batch_jaccard(masks: &[SoftMask], batch: &Batch<'_>, infer: InferConfig) -> Result<Option<f64>> {
    let mut total = 0.0;
    for (m, gt) in masks.iter().zip(&batch.masks) {
        let Some(gt) = gt else { return Ok(None) };
        let pred = infer.finish(m.clone()).1;
        total += crate::metrics::jaccard(&pred, gt)?;
    }
    Ok(Some(total / masks.len() as f64))
}

/// Finite-difference check of the total loss with respect to every
/// generator parameter, in double precision.
///
/// Returns the normwise relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole
/// parameter vector and the number of entries compared.
pub fn generator_loss_gradcheck(cfg: &TrainConfig, batch: &Batch<'_>, h: f64) -> Result<(f64, usize)> {
    let players = Players::init(cfg)?;
    let gen: ParamStore<f64> = players.generator.cast();
    let inp: ParamStore<f64> = players.inpainter.cast();
    let mut pass = forward(cfg, &gen, &inp, batch, None, Player::Generator)?;
    pass.g.backward(pass.loss.total)?;
    let mut analytic = Vec::new();
    for (p, &v) in gen.iter().zip(pass.gen_binding.vars()) {
        if p.trainable() {
            match pass.g.grad(v) {
                Some(g) => analytic.extend_from_slice(g),
                None => analytic.extend(std::iter::repeat_n(0.0, p.value.len())),
            }
        }
    }
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let pass = forward(cfg, store, &inp, batch, None, Player::Neither)?;
        Ok(pass.g.value(pass.loss.total).item())
    };
    let mut probe = gen.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    let names: Vec<String> = gen.iter().filter(|p| p.trainable()).map(|p| p.name.clone()).collect();
    for name in &names {
        let len = probe.value(name)?.len();
        for k in 0..len {
            let orig = probe.value(name)?.data()[k];
            probe.get_mut(name)?.value.data_mut()[k] = orig + h;
            let plus = eval(&probe)?;
            probe.get_mut(name)?.value.data_mut()[k] = orig - h;
            let minus = eval(&probe)?;
            probe.get_mut(name)?.value.data_mut()[k] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric)).max(1e-300);
    Ok((norm(&diff) / scale, numeric.len()))
}
