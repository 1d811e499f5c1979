use super::params::ParamStore;
use super::tensor::Scalar;
use crate::error::{Error, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Adaptive-moment optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 1e-4, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One bias-corrected update of every trainable entry, then zeroes the
    /// gradients. Every trainable entry must carry a gradient.
    pub fn step<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable() && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        store.step += 1;
        let t = store.step as i32;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (b1s, b2s) = (S::of(b1), S::of(b2));
        let (one_b1, one_b2) = (S::of(1.0 - b1), S::of(1.0 - b2));
        let step_size = S::of(self.lr / c1);
        let inv_c2 = S::of(1.0 / c2);
        let eps = S::of(self.eps);
        for p in store.iter_mut().filter(|p| p.trainable()) {
            let grad = p.grad.as_mut().expect("checked above");
            let (w, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for (((w, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
                *m = b1s * *m + one_b1 * *g;
                *v = b2s * *v + one_b2 * *g * *g;
                *w -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
            grad.data_mut().fill(S::zero());
        }
        Ok(())
    }
}
