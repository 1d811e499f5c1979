//! Central finite-difference verification of the backward rules.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::conv::Conv2dSpec;
use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::seeded;

/// Default finite-difference step.
pub const STEP: f64 = 1e-5;

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
}

/// Compares the analytic gradient of the scalar built by `f` against central
/// differences with step `h`, for every entry of every input.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, mut f: F) -> Result<(f64, usize)>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |f: &mut F, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let orig = input.data()[k];
            probe[i].data_mut()[k] = orig + h;
            let plus = eval(&mut f, &probe)?;
            probe[i].data_mut()[k] = orig - h;
            let minus = eval(&mut f, &probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
            entries += 1;
        }
    }
    Ok((worst, entries))
}

fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Like [`randn`] but keeps every entry at least `gap` away from zero, so
/// piecewise-linear activations are not probed across their kink.
fn randn_away(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.sample(StandardNormal);
        if v >= 0.0 {
            v + gap
        } else {
            v - gap
        }
    })
}

/// Runs a finite-difference check for every layer type of the engine.
///
/// Each case reduces the layer output to a scalar through a fixed random
/// projection so that every output entry contributes.
pub fn layer_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = seeded(seed, 0);
    let mut out = Vec::new();
    let h = STEP;

    // Weighted sum with fixed random weights, so every output entry matters.
    fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
        let mut rng = seeded(seed, 1);
        let w = randn(&mut rng, g.shape(y));
        let w = g.constant(w)?;
        let p = g.mul(y, w)?;
        g.sum(p)
    }

    let mut case = |name: &str, inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>| -> Result<()> {
        let (err, entries) = check(&inputs, h, |g, v| {
            let y = f(g, v)?;
            project(g, y, seed)
        })?;
        out.push(GradCheck { name: name.into(), max_rel_error: err, entries });
        Ok(())
    };

    let x = randn(&mut rng, &[2, 3, 6, 6]);
    let w = randn(&mut rng, &[4, 3, 3, 3]);
    let b = randn(&mut rng, &[4]);
    case("conv2d", vec![x.clone(), w.clone(), b.clone()], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same(3, 1))
    })?;
    case("conv2d_stride2", vec![x.clone(), w.clone(), b.clone()], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::down(3))
    })?;
    case("conv2d_dilated", vec![x.clone(), w.clone(), b.clone()], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same(3, 2))
    })?;
    // dilation wider than the input: only the center tap sees data
    case("conv2d_wide_dilation", vec![x.clone(), w, b], &|g, v| {
        g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same(3, 8))
    })?;

    let a = randn_away(&mut rng, &[2, 3, 4, 4], 1e-3);
    case("relu", vec![a.clone()], &|g, v| g.relu(v[0]))?;
    case("leaky_relu", vec![a.clone()], &|g, v| g.leaky_relu(v[0], 0.1))?;
    case("sigmoid", vec![a.clone()], &|g, v| g.sigmoid(v[0]))?;
    case("tanh", vec![a.clone()], &|g, v| g.tanh(v[0]))?;
    case("softmax_channels", vec![a.clone()], &|g, v| g.softmax_channels(v[0]))?;
    case("square", vec![a.clone()], &|g, v| g.square(v[0]))?;
    case("affine", vec![a.clone()], &|g, v| g.affine(v[0], -0.7, 0.3))?;
    case("select_channel", vec![a.clone()], &|g, v| g.select_channel(v[0], 1))?;
    case("upsample_bilinear", vec![a.clone()], &|g, v| g.upsample_bilinear(v[0], 2))?;

    let c = randn(&mut rng, &[2, 3, 4, 4]);
    case("add", vec![a.clone(), c.clone()], &|g, v| g.add(v[0], v[1]))?;
    case("sub", vec![a.clone(), c.clone()], &|g, v| g.sub(v[0], v[1]))?;
    case("mul", vec![a.clone(), c.clone()], &|g, v| g.mul(v[0], v[1]))?;
    let narrow = randn(&mut rng, &[2, 1, 4, 4]);
    case("mul_broadcast", vec![a.clone(), narrow], &|g, v| g.mul(v[0], v[1]))?;
    let positive = Tensor::from_fn(&[2, 3, 4, 4], |i| 0.5 + (i % 7) as f64 * 0.3);
    case("div", vec![a.clone(), positive], &|g, v| g.div(v[0], v[1]))?;
    case("concat_channels", vec![a.clone(), c], &|g, v| g.concat_channels(&[v[0], v[1]]))?;
    case("sum", vec![a.clone()], &|g, v| {
        let s = g.square(v[0])?;
        g.sum(s)
    })?;
    case("mean", vec![a.clone()], &|g, v| {
        let s = g.square(v[0])?;
        g.mean(s)
    })?;
    case("sum_per_sample", vec![a.clone()], &|g, v| {
        let s = g.square(v[0])?;
        g.sum_per_sample(s)
    })?;

    let gamma = Tensor::from_fn(&[3], |i| 0.8 + 0.2 * i as f64);
    let beta = Tensor::from_fn(&[3], |i| 0.1 * i as f64 - 0.1);
    case("batchnorm_train", vec![a.clone(), gamma.clone(), beta.clone()], &|g, v| {
        Ok(g.batchnorm_train(v[0], v[1], v[2], 1e-5)?.0)
    })?;
    case("channel_affine", vec![a.clone(), gamma.clone(), beta.clone()], &|g, v| g.channel_affine(v[0], v[1], v[2]))?;
    case("batchnorm_eval", vec![a, gamma, beta], &|g, v| {
        g.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.05], &[1.5, 0.7, 2.0], 1e-5)
    })?;
    Ok(out)
}
