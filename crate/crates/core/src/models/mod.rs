//! The two networks of the adversarial game.
//!
//! Both are small convolutional encoder-decoders built on the
//! [`crate::numerics`] graph. Their parameters live in a [`ParamStore`]
//! with stable, dotted names; batchnorm running statistics are stored next
//! to the weights.

mod generator;
mod inpainter;
mod net;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

pub use generator::{generator_forward, generator_graph, GeneratorConfig};
pub use inpainter::{encode_image, inpainter_forward, inpainter_graph, ImageFeatures, InpainterConfig};
pub use net::NormUpdate;

use crate::error::{Error, Result};
use crate::field::{FlowField, Frame};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};

/// Normalization applied after every hidden convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    /// Batch normalization with running statistics.
    Batch,
    /// Learned per-channel scale and shift only.
    Affine,
}

/// How decoder stages merge encoder features of the same resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Skip {
    Add,
    Concat,
}

/// Batchnorm behaviour of a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running averages are reported back.
    Train,
    /// Running statistics.
    Eval,
}

/// Hyper-parameters shared by the building blocks of both networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockConfig {
    pub norm: Norm,
    pub skip: Skip,
    pub leaky_slope: f64,
    /// Weight of the previous running statistic in the batchnorm update.
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self { norm: Norm::Batch, skip: Skip::Add, leaky_slope: 0.1, bn_momentum: 0.9, bn_eps: 1e-5 }
    }
}

/// Channel width of encoder level `level`.
pub(crate) fn level_channels(base: usize, level: usize) -> usize {
    if level == 0 {
        base
    } else {
        2 * base
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    /// Normal with standard deviation `gain / sqrt(fan_in)`.
    Kaiming { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

/// Name, shape and initializer of every entry of a network, in store order.
pub(crate) struct Layout {
    entries: Vec<(String, Vec<usize>, Init)>,
    block: BlockConfig,
}

impl Layout {
    pub fn new(block: BlockConfig) -> Self {
        Self { entries: Vec::new(), block }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.entries.push((name, shape, init));
    }

    /// Convolution followed by normalization and a leaky rectifier.
    pub fn block(&mut self, name: &str, cin: usize, cout: usize) {
        let s = self.block.leaky_slope;
        let gain = num_traits::Float::sqrt(2.0 / (1.0 + s * s));
        self.push(alloc::format!("{name}.weight"), vec![cout, cin, 3, 3], Init::Kaiming { fan_in: cin * 9, gain });
        match self.block.norm {
            Norm::Batch => {
                self.push(alloc::format!("{name}.bn.gamma"), vec![cout], Init::Ones);
                self.push(alloc::format!("{name}.bn.beta"), vec![cout], Init::Zeros);
                self.push(alloc::format!("{name}.bn.running_mean"), vec![cout], Init::Zeros);
                self.push(alloc::format!("{name}.bn.running_var"), vec![cout], Init::Ones);
                self.push(alloc::format!("{name}.bn.num_batches"), vec![1], Init::Zeros);
            }
            Norm::Affine => {
                self.push(alloc::format!("{name}.affine.gamma"), vec![cout], Init::Ones);
                self.push(alloc::format!("{name}.affine.beta"), vec![cout], Init::Zeros);
            }
        }
    }

    /// Plain convolution with bias and no activation.
    pub fn head(&mut self, name: &str, cin: usize, cout: usize) {
        self.push(alloc::format!("{name}.weight"), vec![cout, cin, 3, 3], Init::Kaiming { fan_in: cin * 9, gain: 1.0 });
        self.push(alloc::format!("{name}.bias"), vec![cout], Init::Zeros);
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum()
    }

    /// Trainable scalars of entries whose name starts with `prefix`.
    pub fn trainable_count(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _, _)| n.starts_with(prefix) && !crate::numerics::params::is_buffer_name(n))
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    pub fn build<S: Scalar>(&self, seed: u64) -> Result<ParamStore<S>> {
        let mut rng = crate::rng::seeded(seed, 0);
        let mut store = ParamStore::new(seed);
        for (name, shape, init) in &self.entries {
            let len: usize = shape.iter().product();
            let data = match *init {
                Init::Zeros => vec![S::zero(); len],
                Init::Ones => vec![S::one(); len],
                Init::Kaiming { fan_in, gain } => {
                    let dist = Normal::new(0.0, gain / num_traits::Float::sqrt(fan_in as f64))
                        .map_err(|e| Error::Config(alloc::format!("{name}: {e}")))?;
                    (0..len).map(|_| S::of(dist.sample(&mut rng))).collect()
                }
            };
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(store)
    }
}

/// Divides a flow field by its root-mean-square magnitude.
///
/// Returns the scaled field and the factor applied. A zero field is
/// returned unchanged with factor 1.
pub fn normalize_flow(flow: &FlowField) -> (FlowField, f32) {
    let rms = flow.rms();
    if rms <= 1e-12 {
        return (flow.clone(), 1.0);
    }
    let factor = (1.0 / rms) as f32;
    (flow.scaled(factor), factor)
}

/// Moves batchnorm running statistics toward the batch statistics in
/// `updates`: `running = momentum * running + (1 - momentum) * batch`.
pub fn apply_norm_updates<S: Scalar>(store: &mut ParamStore<S>, updates: &[NormUpdate<S>], momentum: f64) -> Result<()> {
    let keep = S::of(momentum);
    let take = S::of(1.0 - momentum);
    for u in updates {
        let mean = store.get_mut(&alloc::format!("{}.running_mean", u.prefix))?;
        for (r, &b) in mean.value.data_mut().iter_mut().zip(&u.stats.mean) {
            *r = keep * *r + take * b;
        }
        let var = store.get_mut(&alloc::format!("{}.running_var", u.prefix))?;
        for (r, &b) in var.value.data_mut().iter_mut().zip(&u.stats.var) {
            *r = keep * *r + take * b;
        }
        let count = store.get_mut(&alloc::format!("{}.num_batches", u.prefix))?;
        count.value.data_mut()[0] += S::one();
    }
    Ok(())
}

/// Stacks frames and flows into `N x 3 x H x W` and `N x 2 x H x W`
/// constants on `g`.
pub fn stack_inputs<S: Scalar>(g: &mut Graph<S>, frames: &[&Frame], flows: &[&FlowField]) -> Result<(Var, Var)> {
    let first = frames.first().ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let (w, h) = (first.width(), first.height());
    if frames.len() != flows.len()
        || frames.iter().any(|f| (f.width(), f.height()) != (w, h))
        || flows.iter().any(|f| (f.width(), f.height()) != (w, h))
    {
        return Err(Error::shape("stack_inputs", "frames and flows must share one size"));
    }
    let n = frames.len();
    let mut img = Vec::with_capacity(n * 3 * w * h);
    for f in frames {
        f.write_planar(&mut img);
    }
    let mut fl = Vec::with_capacity(n * 2 * w * h);
    for f in flows {
        f.write_planar(&mut fl);
    }
    let frames = g.constant(Tensor::new(&[n, 3, h, w], img)?)?;
    let flows = g.constant(Tensor::new(&[n, 2, h, w], fl)?)?;
    Ok((frames, flows))
}

pub(crate) fn check_input_size(height: usize, width: usize, depth: usize) -> Result<()> {
    let unit = 1usize << depth;
    if height == 0 || width == 0 || height % unit != 0 || width % unit != 0 {
        return Err(Error::Config(alloc::format!(
            "input size {width}x{height} is not divisible by 2^{depth} = {unit}"
        )));
    }
    Ok(())
}

pub(crate) fn check_rates(rates: &[usize]) -> Result<()> {
    if rates.contains(&0) || rates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(alloc::format!("atrous rates {rates:?} must be positive and strictly increasing")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut layout = Layout::new(BlockConfig::default());
        layout.block("b", 1, 2);
        let mut store = layout.build::<f64>(0).unwrap();
        let stats = crate::numerics::BatchStats { mean: vec![1.0, -2.0], var: vec![3.0, 5.0] };
        let upd = NormUpdate { prefix: "b.bn".into(), stats };
        apply_norm_updates(&mut store, &[upd], 0.9).unwrap();
        let m = store.value("b.bn.running_mean").unwrap().data().to_vec();
        assert!((m[0] - 0.1).abs() < 1e-12 && (m[1] + 0.2).abs() < 1e-12);
        let v = store.value("b.bn.running_var").unwrap().data().to_vec();
        assert!((v[0] - 1.2).abs() < 1e-12 && (v[1] - 1.4).abs() < 1e-12);
        assert_eq!(store.value("b.bn.num_batches").unwrap().data(), &[1.0]);
    }

    #[test]
    fn normalized_flow_has_unit_rms() {
        let f = FlowField::from_fn(8, 4, |x, y| [x as f32 - 3.0, y as f32 * 2.0]);
        let (n, k) = normalize_flow(&f);
        assert!((n.rms() - 1.0).abs() < 1e-6);
        assert!((k as f64 - 1.0 / f.rms()).abs() < 1e-6);
        let z = FlowField::zeros(4, 4);
        assert_eq!(normalize_flow(&z), (z, 1.0));
    }

    #[test]
    fn rate_and_size_validation() {
        assert!(check_rates(&[2, 4, 8, 16]).is_ok());
        assert!(check_rates(&[2, 2]).is_err());
        assert!(check_rates(&[4, 2]).is_err());
        assert!(check_input_size(64, 64, 3).is_ok());
        assert!(check_input_size(60, 64, 3).is_err());
    }
}
