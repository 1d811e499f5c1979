//! Normalized masked reconstruction loss.

use alloc::format;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::field::{FlowField, SoftMask};
use crate::numerics::{Graph, Scalar, Var};

/// The two ratio terms of the loss and their denominators.
///
/// For a batch every field is the mean over samples of the per-sample value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Error of the flow reconstructed inside the mask, relative to the flow
    /// energy inside the mask.
    pub term_in: f64,
    /// Same for the outside, reconstructed from the inside.
    pub term_out: f64,
    pub total: f64,
    pub denom_in: f64,
    pub denom_out: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.term_in.is_finite() && self.term_out.is_finite() && self.total.is_finite()
    }
}

/// Evaluates the loss for one sample in double precision.
///
/// `recon_in` is the inpainter output when the inside of `mask` is hidden,
/// `recon_out` when the outside is hidden.
pub fn masked_ratio_loss(
    flow: &FlowField,
    mask: &SoftMask,
    recon_in: &FlowField,
    recon_out: &FlowField,
    eps: f64,
) -> Result<LossBreakdown> {
    let (w, h) = (flow.width(), flow.height());
    let sizes = [(mask.width(), mask.height()), (recon_in.width(), recon_in.height()), (recon_out.width(), recon_out.height())];
    if sizes.iter().any(|&s| s != (w, h)) {
        return Err(Error::shape("masked_ratio_loss", format!("flow {w}x{h} vs {sizes:?}")));
    }
    if !(flow.is_finite() && recon_in.is_finite() && recon_out.is_finite() && mask.probs().iter().all(|p| p.is_finite())) {
        return Err(Error::NonFinite { op: "masked_ratio_loss" });
    }
    let (mut num_in, mut den_in, mut num_out, mut den_out) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..w * h {
        let chi = mask.probs()[i] as f64;
        let u = flow.vectors()[i];
        let (a, b) = (recon_in.vectors()[i], recon_out.vectors()[i]);
        for k in 0..2 {
            let uk = u[k] as f64;
            num_in += (chi * (uk - a[k] as f64)).powi(2);
            den_in += (chi * uk).powi(2);
            num_out += ((1.0 - chi) * (uk - b[k] as f64)).powi(2);
            den_out += ((1.0 - chi) * uk).powi(2);
        }
    }
    let term_in = num_in / (den_in + eps);
    let term_out = num_out / (den_out + eps);
    Ok(LossBreakdown { term_in, term_out, total: term_in + term_out, denom_in: den_in + eps, denom_out: den_out + eps })
}

/// Graph nodes of a batch loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub term_in: Var,
    pub term_out: Var,
    pub total: Var,
    pub denom_in: Var,
    pub denom_out: Var,
}

impl LossVars {
    pub fn breakdown<S: Scalar>(&self, g: &Graph<S>) -> LossBreakdown {
        let mean = |v: Var| {
            let t = g.value(v);
            t.sum() / t.len().max(1) as f64
        };
        LossBreakdown {
            term_in: g.value(self.term_in).item().f64(),
            term_out: g.value(self.term_out).item().f64(),
            total: g.value(self.total).item().f64(),
            denom_in: mean(self.denom_in),
            denom_out: mean(self.denom_out),
        }
    }
}

fn ratio<S: Scalar>(g: &mut Graph<S>, flows: Var, weight: Var, recon: Var, eps: f64) -> Result<(Var, Var)> {
    let diff = g.sub(flows, recon)?;
    let diff = g.mul(diff, weight)?;
    let diff = g.square(diff)?;
    let num = g.sum_per_sample(diff)?;
    let visible = g.mul(flows, weight)?;
    let visible = g.square(visible)?;
    let den = g.sum_per_sample(visible)?;
    let den = g.add_scalar(den, S::of(eps))?;
    let per_sample = g.div(num, den)?;
    Ok((g.mean(per_sample)?, den))
}

/// Builds the batch loss on `g`: each term is normalized per sample and then
/// averaged over the batch. `flows`, `recon_in` and `recon_out` are
/// `N x 2 x H x W`, `mask` is `N x 1 x H x W`.
pub fn loss_graph<S: Scalar>(g: &mut Graph<S>, flows: Var, mask: Var, recon_in: Var, recon_out: Var, eps: f64) -> Result<LossVars> {
    let shape = g.shape(flows).to_vec();
    if g.shape(recon_in) != shape.as_slice() || g.shape(recon_out) != shape.as_slice() {
        return Err(Error::shape("loss_graph", "reconstructions must match the flow"));
    }
    let outside = g.one_minus(mask)?;
    let (term_in, denom_in) = ratio(g, flows, mask, recon_in, eps)?;
    let (term_out, denom_out) = ratio(g, flows, outside, recon_out, eps)?;
    let total = g.add(term_in, term_out)?;
    if !g.value(total).all_finite() {
        return Err(Error::NonFinite { op: "loss_graph" });
    }
    Ok(LossVars { term_in, term_out, total, denom_in, denom_out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use proptest::prelude::*;

    const EPS: f64 = 1e-6;

    fn two_pixel() -> (FlowField, SoftMask, FlowField, FlowField) {
        let flow = FlowField::new(2, 1, alloc::vec![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mask = SoftMask::new(2, 1, alloc::vec![1.0, 0.0]).unwrap();
        let recon_in = FlowField::zeros(2, 1);
        let recon_out = FlowField::new(2, 1, alloc::vec![[5.0, 5.0], [0.0, 1.0]]).unwrap();
        (flow, mask, recon_in, recon_out)
    }

    #[test]
    fn two_pixel_example() {
        let (flow, mask, a, b) = two_pixel();
        let l = masked_ratio_loss(&flow, &mask, &a, &b, EPS).unwrap();
        assert_eq!(l.term_in, 1.0 / (1.0 + EPS));
        assert_eq!(l.term_out, 0.0);
        assert!((l.total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn empty_mask_with_perfect_outside() {
        let flow = FlowField::from_fn(4, 4, |x, y| [x as f32, -(y as f32)]);
        let l = masked_ratio_loss(&flow, &SoftMask::uniform(4, 4, 0.0), &FlowField::zeros(4, 4), &flow, EPS).unwrap();
        assert_eq!((l.term_in, l.term_out, l.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let (flow, mask, a, b) = two_pixel();
        let mut bad = a.clone();
        bad.vectors_mut()[0][1] = f32::NAN;
        assert!(matches!(masked_ratio_loss(&flow, &mask, &bad, &b, EPS), Err(Error::NonFinite { .. })));
        assert!(masked_ratio_loss(&flow, &SoftMask::uniform(3, 1, 0.5), &a, &b, EPS).is_err());
    }

    #[test]
    fn zero_reconstruction_is_below_one() {
        let flow = FlowField::from_fn(3, 3, |x, y| [x as f32 - 1.0, y as f32 + 0.5]);
        let mask = SoftMask::new(3, 3, (0..9).map(|i| (i % 4) as f32 / 3.0).collect()).unwrap();
        let zero = FlowField::zeros(3, 3);
        let l = masked_ratio_loss(&flow, &mask, &zero, &zero, EPS).unwrap();
        assert!(l.term_in < 1.0 && l.term_out < 1.0);
        // hand value: energy / (energy + eps)
        let e_in: f64 = (0..9)
            .map(|i| {
                let chi = (i % 4) as f64 / 3.0;
                let v = flow.vectors()[i];
                chi * chi * ((v[0] as f64).powi(2) + (v[1] as f64).powi(2))
            })
            .sum();
        assert!((l.term_in - e_in / (e_in + EPS)).abs() < 1e-12);
    }

    fn to_tensor(fields: &[&FlowField]) -> Tensor<f64> {
        let mut data = alloc::vec::Vec::new();
        for f in fields {
            f.write_planar(&mut data);
        }
        Tensor::new(&[fields.len(), 2, fields[0].height(), fields[0].width()], data).unwrap()
    }

    #[test]
    fn graph_matches_plain_evaluator_per_sample_mean() {
        let f1 = FlowField::from_fn(3, 2, |x, y| [x as f32 + 0.5, y as f32 - 2.0]);
        let f2 = FlowField::from_fn(3, 2, |x, y| [(x * y) as f32 * 10.0, 1.0]);
        let r1 = FlowField::from_fn(3, 2, |x, _| [x as f32, 0.25]);
        let r2 = FlowField::from_fn(3, 2, |_, y| [-1.0, y as f32]);
        let m1 = SoftMask::new(3, 2, alloc::vec![0.1, 0.9, 0.5, 0.0, 1.0, 0.3]).unwrap();
        let m2 = SoftMask::new(3, 2, alloc::vec![0.7, 0.2, 0.0, 1.0, 0.4, 0.6]).unwrap();
        let mut g: Graph<f64> = Graph::new();
        let flows = g.constant(to_tensor(&[&f1, &f2])).unwrap();
        let mut md = alloc::vec::Vec::new();
        m1.write_planar(&mut md);
        m2.write_planar(&mut md);
        let mask = g.constant(Tensor::new(&[2, 1, 2, 3], md).unwrap()).unwrap();
        let rin = g.constant(to_tensor(&[&r1, &r2])).unwrap();
        let rout = g.constant(to_tensor(&[&r2, &r1])).unwrap();
        let vars = loss_graph(&mut g, flows, mask, rin, rout, EPS).unwrap();
        let got = vars.breakdown(&g);
        let a = masked_ratio_loss(&f1, &m1, &r1, &r2, EPS).unwrap();
        let b = masked_ratio_loss(&f2, &m2, &r2, &r1, EPS).unwrap();
        assert!((got.term_in - (a.term_in + b.term_in) / 2.0).abs() < 1e-6);
        assert!((got.term_out - (a.term_out + b.term_out) / 2.0).abs() < 1e-6);
        assert!((got.total - (a.total + b.total) / 2.0).abs() < 1e-6);
    }

    fn field(w: usize, h: usize, v: &[f32]) -> FlowField {
        FlowField::new(w, h, v.chunks(2).map(|c| [c[0], c[1]]).collect()).unwrap()
    }

    fn case() -> impl Strategy<Value = (FlowField, SoftMask, FlowField, FlowField)> {
        (1usize..5, 1usize..5).prop_flat_map(|(w, h)| {
            let n = w * h;
            (
                proptest::collection::vec(-10.0f32..10.0, 2 * n),
                proptest::collection::vec(0.0f32..=1.0, n),
                proptest::collection::vec(-10.0f32..10.0, 2 * n),
                proptest::collection::vec(-10.0f32..10.0, 2 * n),
            )
                .prop_map(move |(u, m, a, b)| {
                    (field(w, h, &u), SoftMask::new(w, h, m).unwrap(), field(w, h, &a), field(w, h, &b))
                })
        })
    }

    proptest! {
        #[test]
        fn complement_swaps_terms((flow, mask, a, b) in case()) {
            let l = masked_ratio_loss(&flow, &mask, &a, &b, EPS).unwrap();
            let s = masked_ratio_loss(&flow, &mask.complement(), &b, &a, EPS).unwrap();
            // 1 - (1 - chi) is not always chi in f32, so compare with a tight tolerance
            prop_assert!((l.term_in - s.term_out).abs() <= 1e-5 * l.term_in.max(1.0));
            prop_assert!((l.term_out - s.term_in).abs() <= 1e-5 * l.term_out.max(1.0));
        }

        #[test]
        fn complement_swap_is_exact_on_hard_masks((flow, mask, a, b) in case()) {
            let hard = SoftMask::from_mask(&mask.binarize(0.5));
            let l = masked_ratio_loss(&flow, &hard, &a, &b, EPS).unwrap();
            let s = masked_ratio_loss(&flow, &hard.complement(), &b, &a, EPS).unwrap();
            prop_assert_eq!(l.term_in, s.term_out);
            prop_assert_eq!(l.term_out, s.term_in);
        }

        #[test]
        fn terms_are_non_negative_and_finite((flow, mask, a, b) in case()) {
            let l = masked_ratio_loss(&flow, &mask, &a, &b, EPS).unwrap();
            prop_assert!(l.term_in >= 0.0 && l.term_out >= 0.0 && l.is_finite());
            prop_assert_eq!(l.total, l.term_in + l.term_out);
        }

        #[test]
        fn zero_reconstruction_stays_below_one((flow, mask, _a, _b) in case()) {
            let z = FlowField::zeros(flow.width(), flow.height());
            let l = masked_ratio_loss(&flow, &mask, &z, &z, EPS).unwrap();
            prop_assert!(l.term_in < 1.0 && l.term_out < 1.0);
        }

        #[test]
        fn scale_invariant_without_eps_power_of_two((flow, mask, a, b) in case(), k in -3i32..=3, neg in any::<bool>()) {
            let c = if neg { -(2f32.powi(k)) } else { 2f32.powi(k) };
            let l = masked_ratio_loss(&flow, &mask, &a, &b, 0.0).unwrap();
            let s = masked_ratio_loss(&flow.scaled(c), &mask, &a.scaled(c), &b.scaled(c), 0.0).unwrap();
            for (x, y) in [(l.term_in, s.term_in), (l.term_out, s.term_out)] {
                if x.is_finite() {
                    prop_assert!((x - y).abs() <= 1e-6 * x.abs());
                }
            }
        }

        #[test]
        fn scale_invariant_without_eps_any_factor(
            data in proptest::collection::vec(-10.0f64..10.0, 3 * 36),
            m in proptest::collection::vec(0.05f64..0.95, 2 * 9),
            c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        ) {
            let eval = |c: f64| {
                let mut g: Graph<f64> = Graph::new();
                let t = |k: usize| Tensor::new(&[2, 2, 3, 3], data[k * 36..(k + 1) * 36].iter().map(|v| v * c).collect()).unwrap();
                let flows = g.constant(t(0)).unwrap();
                let rin = g.constant(t(1)).unwrap();
                let rout = g.constant(t(2)).unwrap();
                let mask = g.constant(Tensor::new(&[2, 1, 3, 3], m.clone()).unwrap()).unwrap();
                loss_graph(&mut g, flows, mask, rin, rout, 0.0).unwrap().breakdown(&g)
            };
            let (l, s) = (eval(1.0), eval(c));
            prop_assert!((l.term_in - s.term_in).abs() <= 1e-6 * l.term_in);
            prop_assert!((l.term_out - s.term_out).abs() <= 1e-6 * l.term_out);
        }
    }
}
