//! Graph-building helpers shared by both networks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{BlockConfig, Mode, Norm, Skip};
use crate::error::{Error, Result};
use crate::numerics::{BatchStats, Binding, Conv2dSpec, Graph, ParamStore, Scalar, Var};

/// Batch statistics observed by one batchnorm layer during a training-mode
/// forward pass. `prefix` is the layer's parameter prefix (`"<block>.bn"`).
#[derive(Clone, Debug)]
pub struct NormUpdate<S> {
    pub prefix: String,
    pub stats: BatchStats<S>,
}

pub(crate) struct Net<'a, S: Scalar> {
    pub g: &'a mut Graph<S>,
    store: &'a ParamStore<S>,
    binding: &'a Binding,
    block: BlockConfig,
    mode: Mode,
    pub updates: Vec<NormUpdate<S>>,
}

impl<'a, S: Scalar> Net<'a, S> {
    pub fn new(
        g: &'a mut Graph<S>,
        store: &'a ParamStore<S>,
        binding: &'a Binding,
        block: BlockConfig,
        mode: Mode,
    ) -> Result<Self> {
        if binding.vars().len() != store.len() {
            return Err(Error::Invalid("binding does not belong to this store".into()));
        }
        Ok(Self { g, store, binding, block, mode, updates: Vec::new() })
    }

    pub fn param(&self, name: &str) -> Result<Var> {
        Ok(self.binding.vars()[self.store.position(name)?])
    }

    /// 3x3 convolution, then normalization and a leaky rectifier.
    pub fn block(&mut self, name: &str, x: Var, spec: Conv2dSpec) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let y = self.g.conv2d(x, w, None, spec)?;
        let y = match self.block.norm {
            Norm::Affine => {
                let gamma = self.param(&format!("{name}.affine.gamma"))?;
                let beta = self.param(&format!("{name}.affine.beta"))?;
                self.g.channel_affine(y, gamma, beta)?
            }
            Norm::Batch => {
                let prefix = format!("{name}.bn");
                let gamma = self.param(&format!("{prefix}.gamma"))?;
                let beta = self.param(&format!("{prefix}.beta"))?;
                let eps = S::of(self.block.bn_eps);
                match self.mode {
                    Mode::Train => {
                        let (y, stats) = self.g.batchnorm_train(y, gamma, beta, eps)?;
                        self.updates.push(NormUpdate { prefix, stats });
                        y
                    }
                    Mode::Eval => {
                        let seen = self.store.value(&format!("{prefix}.num_batches"))?.data()[0];
                        if seen <= S::zero() {
                            return Err(Error::MissingStatistics(prefix));
                        }
                        let mean = self.store.value(&format!("{prefix}.running_mean"))?.data();
                        let var = self.store.value(&format!("{prefix}.running_var"))?.data();
                        self.g.batchnorm_eval(y, gamma, beta, mean, var, eps)?
                    }
                }
            }
        };
        self.g.leaky_relu(y, S::of(self.block.leaky_slope))
    }

    /// 3x3 convolution with bias, no activation.
    pub fn head(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let b = self.param(&format!("{name}.bias"))?;
        self.g.conv2d(x, w, Some(b), Conv2dSpec::same(3, 1))
    }

    /// Residual stack of dilated blocks: `x + f(x)`.
    pub fn atrous(&mut self, prefix: &str, x: Var, rates: &[usize]) -> Result<Var> {
        if rates.is_empty() {
            return Ok(x);
        }
        let mut y = x;
        for (i, &r) in rates.iter().enumerate() {
            y = self.block(&format!("{prefix}{i}"), y, Conv2dSpec::same(3, r))?;
        }
        self.g.add(y, x)
    }

    /// Merges decoder features with same-resolution encoder features.
    pub fn merge(&mut self, y: Var, skips: &[Var]) -> Result<Var> {
        match self.block.skip {
            Skip::Add => {
                let mut out = y;
                for &s in skips {
                    out = self.g.add(out, s)?;
                }
                Ok(out)
            }
            Skip::Concat => {
                let mut parts = alloc::vec![y];
                parts.extend_from_slice(skips);
                self.g.concat_channels(&parts)
            }
        }
    }
}
