//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward rule. Node order is a topological order, so
//! [`Graph::backward`] walks the tape once in reverse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{col2im, im2col, Conv2dSpec, ConvGeometry};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batchnorm.
#[derive(Clone, Debug)]
pub struct BatchStats<S> {
    pub mean: Vec<S>,
    /// Unbiased variance.
    pub var: Vec<S>,
}

enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
        /// im2col of every sample; empty when the weight needs no gradient.
        cols: Vec<S>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product; either side may have a single channel that is
    /// broadcast over the other's channels.
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, S),
    Square(Var),
    Relu(Var),
    LeakyRelu(Var, S),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxChannels(Var),
    SelectChannel(Var, usize),
    Concat(Vec<Var>),
    Upsample(Var, usize),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<S>,
        inv_std: Vec<S>,
        /// Batch statistics were used (gradient flows through them).
        train: bool,
    },
    SumAll(Var),
    MeanAll(Var),
    SumPerSample(Var),
}

struct Node<S> {
    value: Tensor<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Separable bilinear interpolation table for one axis (half-pixel centers).
fn upsample_taps(size: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..size * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src as usize).min(size - 1);
            let i1 = (i0 + 1).min(size - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated by the last [`Graph::backward`], if the node was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        self.push("leaf", value, requires_grad, Op::Leaf)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("conv2d input")?;
        let (co, ci, kh, kw) = self.value(weight).dims4("conv2d weight")?;
        if ci != c {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c} but weight expects {ci}"),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != co {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias has {} entries for {co} output channels", self.value(b).len()),
                ));
            }
        }
        if spec.dilation.contains(&0) || spec.stride.contains(&0) {
            return Err(Error::shape("conv2d", "stride and dilation must be >= 1"));
        }
        let oh = spec
            .output_size(h, kh, 0)
            .ok_or_else(|| Error::shape("conv2d", format!("height {h} too small for kernel {kh}")))?;
        let ow = spec
            .output_size(w, kw, 1)
            .ok_or_else(|| Error::shape("conv2d", format!("width {w} too small for kernel {kw}")))?;
        let geom = ConvGeometry {
            batch: n,
            in_channels: c,
            out_channels: co,
            height: h,
            width: w,
            kernel: [kh, kw],
            out_height: oh,
            out_width: ow,
            spec,
        };
        let (k, p) = (geom.patch_len(), geom.out_pixels());
        let keep_cols = self.rg(weight);
        let mut cols = vec![S::zero(); if keep_cols { n * k * p } else { k * p }];
        let mut out = vec![S::zero(); n * co * p];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            let bias_vals = bias.map(|b| self.value(b).data());
            for s in 0..n {
                let col = if keep_cols { &mut cols[s * k * p..(s + 1) * k * p] } else { &mut cols[..] };
                im2col(&geom, &x[s * c * h * w..(s + 1) * c * h * w], col);
                let dst = &mut out[s * co * p..(s + 1) * co * p];
                if let Some(bv) = bias_vals {
                    for (o, &b) in bv.iter().enumerate() {
                        dst[o * p..(o + 1) * p].fill(b);
                    }
                }
                let beta = if bias.is_some() { S::one() } else { S::zero() };
                S::gemm(co, k, p, S::one(), wt, k as isize, 1, col, p as isize, 1, beta, dst, p as isize, 1);
            }
        }
        if !keep_cols {
            cols = Vec::new();
        }
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, co, oh, ow], out)?;
        self.push("conv2d", value, rg, Op::Conv2d { input, weight, bias, geom, cols })
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(name, value, rg, op)
    }

    fn map(&mut self, name: &'static str, a: Var, f: impl Fn(S) -> S, op: Op<S>) -> Result<Var> {
        let src = self.value(a);
        let value = Tensor::new(src.shape(), src.data().iter().map(|&x| f(x)).collect())?;
        let rg = self.rg(a);
        self.push(name, value, rg, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise product. If exactly one operand has one channel and the
    /// other shapes agree, that operand is broadcast over channels.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let value = if sa == sb {
            let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(sa, data)?
        } else {
            let (wide, narrow) = broadcast_pair(sa, sb)
                .map(|swap| if swap { (b, a) } else { (a, b) })
                .ok_or_else(|| Error::shape("mul", format!("{sa:?} vs {sb:?}")))?;
            let (n, c, h, w) = self.value(wide).dims4("mul")?;
            let hw = h * w;
            let (x, m) = (self.value(wide).data(), self.value(narrow).data());
            let mut out = vec![S::zero(); n * c * hw];
            for s in 0..n {
                let mk = &m[s * hw..(s + 1) * hw];
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    for i in 0..hw {
                        out[base + i] = x[base + i] * mk[i];
                    }
                }
            }
            Tensor::new(&[n, c, h, w], out)?
        };
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", value, rg, Op::Mul(a, b))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: S, shift: S) -> Result<Var> {
        self.map("affine", a, |x| scale * x + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var> {
        self.affine(a, s, S::zero())
    }

    pub fn add_scalar(&mut self, a: Var, s: S) -> Result<Var> {
        self.affine(a, S::one(), s)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -S::one(), S::zero())
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -S::one(), S::one())
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map("relu", a, |x| if x > S::zero() { x } else { S::zero() }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var> {
        self.map("leaky_relu", a, |x| if x > S::zero() { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(
            "sigmoid",
            a,
            |x| {
                if x >= S::zero() {
                    S::one() / (S::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (S::one() + e)
                }
            },
            Op::Sigmoid(a),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn softmax_channels(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4("softmax_channels")?;
        let hw = h * w;
        let x = self.value(a).data();
        let mut out = vec![S::zero(); x.len()];
        for s in 0..n {
            let base = s * c * hw;
            for i in 0..hw {
                let mut mx = S::neg_infinity();
                for ch in 0..c {
                    mx = mx.max(x[base + ch * hw + i]);
                }
                let mut total = S::zero();
                for ch in 0..c {
                    let e = (x[base + ch * hw + i] - mx).exp();
                    out[base + ch * hw + i] = e;
                    total += e;
                }
                for ch in 0..c {
                    out[base + ch * hw + i] = out[base + ch * hw + i] / total;
                }
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(a);
        self.push("softmax_channels", value, rg, Op::SoftmaxChannels(a))
    }

    pub fn select_channel(&mut self, a: Var, channel: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4("select_channel")?;
        if channel >= c {
            return Err(Error::shape("select_channel", format!("channel {channel} of {c}")));
        }
        let hw = h * w;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(n * hw);
        for s in 0..n {
            let base = (s * c + channel) * hw;
            out.extend_from_slice(&x[base..base + hw]);
        }
        let value = Tensor::new(&[n, 1, h, w], out)?;
        let rg = self.rg(a);
        self.push("select_channel", value, rg, Op::SelectChannel(a, channel))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let (n, _, h, w) = self.value(first).dims4("concat")?;
        let mut channels = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?}", self.value(first).shape(), self.value(p).shape()),
                ));
            }
            channels += pc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * channels * hw);
        for s in 0..n {
            for &p in parts {
                let pc = self.value(p).shape()[1];
                out.extend_from_slice(&self.value(p).data()[s * pc * hw..(s + 1) * pc * hw]);
            }
        }
        let value = Tensor::new(&[n, channels, h, w], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat", value, rg, Op::Concat(parts.to_vec()))
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers, edge
    /// clamped).
    pub fn upsample_bilinear(&mut self, a: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::shape("upsample_bilinear", "factor must be >= 1"));
        }
        let (n, c, h, w) = self.value(a).dims4("upsample_bilinear")?;
        let (oh, ow) = (h * factor, w * factor);
        let (ty, tx) = (upsample_taps(h, factor), upsample_taps(w, factor));
        let x = self.value(a).data();
        let mut out = vec![S::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = S::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = S::of(lx);
                    let top = src[y0 * w + x0] * (S::one() - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (S::one() - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (S::one() - ly) + bot * ly;
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.rg(a);
        self.push("upsample_bilinear", value, rg, Op::Upsample(a, factor))
    }

    /// Training-mode batch normalization over `(N, H, W)` per channel.
    /// Returns the output and the batch statistics for running averages.
    pub fn batchnorm_train(&mut self, a: Var, gamma: Var, beta: Var, eps: S) -> Result<(Var, BatchStats<S>)> {
        let (n, c, h, w) = self.value(a).dims4("batchnorm")?;
        self.check_affine_params(c, gamma, beta)?;
        let hw = h * w;
        let count = n * hw;
        let x = self.value(a).data();
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        let mut inv_std = vec![S::zero(); c];
        for ch in 0..c {
            let mut acc = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                acc += x[base..base + hw].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mu = acc / count as f64;
            let mut sq = 0.0f64;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sq += x[base..base + hw].iter().map(|v| (v.f64() - mu) * (v.f64() - mu)).sum::<f64>();
            }
            let biased = sq / count as f64;
            mean[ch] = S::of(mu);
            var[ch] = S::of(if count > 1 { sq / (count - 1) as f64 } else { 0.0 });
            inv_std[ch] = S::of(1.0 / (biased + eps.f64()).sqrt());
        }
        let (out, normalized) = self.normalize(a, gamma, beta, &mean, &inv_std);
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        let v = self.push(
            "batchnorm",
            value,
            rg,
            Op::BatchNorm { input: a, gamma, beta, normalized, inv_std, train: true },
        )?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[S],
        running_var: &[S],
        eps: S,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4("batchnorm")?;
        self.check_affine_params(c, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batchnorm", "running statistics do not match channels"));
        }
        let inv_std: Vec<S> = running_var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let (out, normalized) = self.normalize(a, gamma, beta, running_mean, &inv_std);
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        self.push(
            "batchnorm",
            value,
            rg,
            Op::BatchNorm { input: a, gamma, beta, normalized, inv_std, train: false },
        )
    }

    /// Per-channel `gamma * x + beta`, the stand-in for batchnorm when batch
    /// statistics are not wanted.
    pub fn channel_affine(&mut self, a: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4("channel_affine")?;
        self.check_affine_params(c, gamma, beta)?;
        let mean = vec![S::zero(); c];
        let inv_std = vec![S::one(); c];
        let (out, normalized) = self.normalize(a, gamma, beta, &mean, &inv_std);
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(a) || self.rg(gamma) || self.rg(beta);
        self.push(
            "channel_affine",
            value,
            rg,
            Op::BatchNorm { input: a, gamma, beta, normalized, inv_std, train: false },
        )
    }

    fn check_affine_params(&self, c: usize, gamma: Var, beta: Var) -> Result<()> {
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape(
                "batchnorm",
                format!(
                    "{c} channels but gamma/beta have {}/{}",
                    self.value(gamma).len(),
                    self.value(beta).len()
                ),
            ));
        }
        Ok(())
    }

    fn normalize(&self, a: Var, gamma: Var, beta: Var, mean: &[S], inv_std: &[S]) -> (Vec<S>, Vec<S>) {
        let shape = self.value(a).shape();
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        let x = self.value(a).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![S::zero(); x.len()];
        let mut normalized = vec![S::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    normalized[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        (out, normalized)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = S::of(self.value(a).sum());
        let rg = self.rg(a);
        self.push("sum", Tensor::scalar(total), rg, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let len = self.value(a).len().max(1);
        let total = S::of(self.value(a).sum() / len as f64);
        let rg = self.rg(a);
        self.push("mean", Tensor::scalar(total), rg, Op::MeanAll(a))
    }

    /// Sums everything but the leading (batch) axis; result has shape `[N]`.
    pub fn sum_per_sample(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = *t.shape().first().ok_or_else(|| Error::shape("sum_per_sample", "rank 0"))?;
        let per = t.len() / n.max(1);
        let out = (0..n)
            .map(|s| S::of(t.data()[s * per..(s + 1) * per].iter().map(|v| v.f64()).sum::<f64>()))
            .collect();
        let value = Tensor::new(&[n], out)?;
        let rg = self.rg(a);
        self.push("sum_per_sample", value, rg, Op::SumPerSample(a))
    }

    /// Reverse pass from a scalar `loss`. Clears previous gradients first, so
    /// repeated calls give identical results.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else { continue };
            let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let result = self.backward_node(i, &op, &grad);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(grad);
            result?;
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<S>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => node.grad = Some(g),
        }
    }

    fn backward_node(&mut self, i: usize, op: &Op<S>, grad: &[S]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom, cols } => {
                self.conv_backward(*input, *weight, *bias, geom, cols, grad);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, grad.to_vec());
                self.accumulate(*b, grad.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, grad.to_vec());
                self.accumulate(*b, grad.iter().map(|&g| -g).collect());
            }
            Op::Mul(a, b) => self.mul_backward(*a, *b, grad)?,
            Op::Div(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                let ga = grad.iter().zip(y).map(|(&g, &y)| g / y).collect();
                let gb = grad.iter().zip(x).zip(y).map(|((&g, &x), &y)| -g * x / (y * y)).collect();
                self.accumulate(*a, ga);
                self.accumulate(*b, gb);
            }
            Op::Affine(a, s) => self.accumulate(*a, grad.iter().map(|&g| g * *s).collect()),
            Op::Square(a) => {
                let x = self.value(*a).data();
                let two = S::of(2.0);
                let ga = grad.iter().zip(x).map(|(&g, &x)| two * x * g).collect();
                self.accumulate(*a, ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = grad.iter().zip(x).map(|(&g, &x)| if x > S::zero() { g } else { S::zero() }).collect();
                self.accumulate(*a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga = grad.iter().zip(x).map(|(&g, &x)| if x > S::zero() { g } else { g * *slope }).collect();
                self.accumulate(*a, ga);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.data();
                let ga = grad.iter().zip(y).map(|(&g, &y)| g * y * (S::one() - y)).collect();
                self.accumulate(*a, ga);
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data();
                let ga = grad.iter().zip(y).map(|(&g, &y)| g * (S::one() - y * y)).collect();
                self.accumulate(*a, ga);
            }
            Op::SoftmaxChannels(a) => {
                let y = self.nodes[i].value.data();
                let shape = self.nodes[i].value.shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut ga = vec![S::zero(); y.len()];
                for s in 0..n {
                    let base = s * c * hw;
                    for p in 0..hw {
                        let mut dot = S::zero();
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dot += y[k] * grad[k];
                        }
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            ga[k] = y[k] * (grad[k] - dot);
                        }
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::SelectChannel(a, channel) => {
                let (n, c, h, w) = self.value(*a).dims4("select_channel")?;
                let hw = h * w;
                let mut ga = vec![S::zero(); n * c * hw];
                for s in 0..n {
                    let base = (s * c + channel) * hw;
                    ga[base..base + hw].copy_from_slice(&grad[s * hw..(s + 1) * hw]);
                }
                self.accumulate(*a, ga);
            }
            Op::Concat(parts) => {
                let shape = self.nodes[i].value.shape();
                let (n, total, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(n * pc * hw);
                        for s in 0..n {
                            let base = (s * total + offset) * hw;
                            gp.extend_from_slice(&grad[base..base + pc * hw]);
                        }
                        self.accumulate(p, gp);
                    }
                    offset += pc;
                }
            }
            Op::Upsample(a, factor) => {
                let (n, c, h, w) = self.value(*a).dims4("upsample_bilinear")?;
                let (oh, ow) = (h * factor, w * factor);
                let (ty, tx) = (upsample_taps(h, *factor), upsample_taps(w, *factor));
                let mut ga = vec![S::zero(); n * c * h * w];
                for plane in 0..n * c {
                    let src = &grad[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut ga[plane * h * w..(plane + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        let ly = S::of(ly);
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let lx = S::of(lx);
                            let g = src[oy * ow + ox];
                            let top = g * (S::one() - ly);
                            let bot = g * ly;
                            dst[y0 * w + x0] += top * (S::one() - lx);
                            dst[y0 * w + x1] += top * lx;
                            dst[y1 * w + x0] += bot * (S::one() - lx);
                            dst[y1 * w + x1] += bot * lx;
                        }
                    }
                }
                self.accumulate(*a, ga);
            }
            Op::BatchNorm { input, gamma, beta, normalized, inv_std, train } => {
                let shape = self.value(*input).shape();
                let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
                let g = self.value(*gamma).data().to_vec();
                let mut dgamma = vec![S::zero(); c];
                let mut dbeta = vec![S::zero(); c];
                for ch in 0..c {
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        for k in base..base + hw {
                            sg += grad[k].f64();
                            sgx += (grad[k] * normalized[k]).f64();
                        }
                    }
                    dbeta[ch] = S::of(sg);
                    dgamma[ch] = S::of(sgx);
                }
                if self.rg(*input) {
                    let mut gx = vec![S::zero(); grad.len()];
                    let m = S::of((n * hw) as f64);
                    for ch in 0..c {
                        let scale = g[ch] * inv_std[ch];
                        for s in 0..n {
                            let base = (s * c + ch) * hw;
                            for k in base..base + hw {
                                gx[k] = if *train {
                                    scale * (grad[k] - (dbeta[ch] + normalized[k] * dgamma[ch]) / m)
                                } else {
                                    scale * grad[k]
                                };
                            }
                        }
                    }
                    self.accumulate(*input, gx);
                }
                self.accumulate(*gamma, dgamma);
                self.accumulate(*beta, dbeta);
            }
            Op::SumAll(a) => {
                let len = self.value(*a).len();
                self.accumulate(*a, vec![grad[0]; len]);
            }
            Op::MeanAll(a) => {
                let len = self.value(*a).len();
                let g = grad[0] / S::of(len.max(1) as f64);
                self.accumulate(*a, vec![g; len]);
            }
            Op::SumPerSample(a) => {
                let t = self.value(*a);
                let n = t.shape()[0];
                let per = t.len() / n.max(1);
                let mut ga = Vec::with_capacity(t.len());
                for &g in grad.iter().take(n) {
                    ga.extend(core::iter::repeat_n(g, per));
                }
                self.accumulate(*a, ga);
            }
        }
        Ok(())
    }

    fn mul_backward(&mut self, a: Var, b: Var, grad: &[S]) -> Result<()> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa == sb {
            let (x, y) = (self.value(a).data(), self.value(b).data());
            let ga = grad.iter().zip(y).map(|(&g, &y)| g * y).collect();
            let gb = grad.iter().zip(x).map(|(&g, &x)| g * x).collect();
            self.accumulate(a, ga);
            self.accumulate(b, gb);
            return Ok(());
        }
        let swap = broadcast_pair(&sa, &sb).ok_or_else(|| Error::shape("mul", "broadcast"))?;
        let (wide, narrow) = if swap { (b, a) } else { (a, b) };
        let (n, c, h, w) = self.value(wide).dims4("mul")?;
        let hw = h * w;
        let (x, m) = (self.value(wide).data(), self.value(narrow).data());
        let mut gw = vec![S::zero(); n * c * hw];
        let mut gn = vec![S::zero(); n * hw];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in 0..hw {
                    gw[base + i] = grad[base + i] * m[s * hw + i];
                    gn[s * hw + i] += grad[base + i] * x[base + i];
                }
            }
        }
        self.accumulate(wide, gw);
        self.accumulate(narrow, gn);
        Ok(())
    }

    fn conv_backward(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: &ConvGeometry, cols: &[S], grad: &[S]) {
        let (n, co, k, p) = (geom.batch, geom.out_channels, geom.patch_len(), geom.out_pixels());
        if let Some(b) = bias {
            if self.rg(b) {
                let mut gb = vec![S::zero(); co];
                for s in 0..n {
                    for (o, slot) in gb.iter_mut().enumerate() {
                        let base = (s * co + o) * p;
                        *slot += S::of(grad[base..base + p].iter().map(|v| v.f64()).sum::<f64>());
                    }
                }
                self.accumulate(b, gb);
            }
        }
        if self.rg(weight) {
            let mut gw = vec![S::zero(); co * k];
            for s in 0..n {
                let dy = &grad[s * co * p..(s + 1) * co * p];
                let col = &cols[s * k * p..(s + 1) * k * p];
                // dW += dY · colsᵀ
                S::gemm(co, p, k, S::one(), dy, p as isize, 1, col, 1, p as isize, S::one(), &mut gw, k as isize, 1);
            }
            self.accumulate(weight, gw);
        }
        if self.rg(input) {
            let (c, hw) = (geom.in_channels, geom.in_pixels());
            let wt = self.value(weight).data();
            let mut gx = vec![S::zero(); n * c * hw];
            let mut dcols = vec![S::zero(); k * p];
            for s in 0..n {
                let dy = &grad[s * co * p..(s + 1) * co * p];
                // dcols = Wᵀ · dY
                S::gemm(k, co, p, S::one(), wt, 1, k as isize, dy, p as isize, 1, S::zero(), &mut dcols, p as isize, 1);
                col2im(geom, &dcols, &mut gx[s * c * hw..(s + 1) * c * hw]);
            }
            self.accumulate(input, gx);
        }
    }
}

/// For a channel-broadcast product returns `Some(swap)` where `swap` means
/// the first operand is the narrow (single channel) one.
fn broadcast_pair(sa: &[usize], sb: &[usize]) -> Option<bool> {
    if sa.len() != 4 || sb.len() != 4 {
        return None;
    }
    let rest_eq = sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3];
    if !rest_eq {
        return None;
    }
    if sb[1] == 1 && sa[1] > 1 {
        Some(false)
    } else if sa[1] == 1 && sb[1] > 1 {
        Some(true)
    } else {
        None
    }
}
