//! Parameter updates: bias-corrected Adam plus the post-step weight clipping
//! the Wasserstein critic needs.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second-moment buffers plus the shared step counter.
/// One state per network; never shared across concurrently stepped networks.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam step over every learnable entry of the store.
    /// Consumes and zeroes the gradients. Errors if any learnable parameter
    /// has no gradient buffer.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        // Validate up front so a partial update never happens.
        for (name, entry) in params.iter() {
            if entry.kind.is_learnable() && entry.grad.is_none() {
                return Err(Error::Contract(format!(
                    "adam step: parameter `{name}` has no gradient"
                )));
            }
        }
        self.t += 1;
        let lr = T::from_f64(self.config.lr);
        let beta1 = T::from_f64(self.config.beta1);
        let beta2 = T::from_f64(self.config.beta2);
        let eps = T::from_f64(self.config.eps);
        let bc1 = T::one() - T::from_f64(self.config.beta1.powi(self.t as i32));
        let bc2 = T::one() - T::from_f64(self.config.beta2.powi(self.t as i32));
        for (name, entry) in params.iter_mut() {
            if !entry.kind.is_learnable() {
                continue;
            }
            let grad = entry.grad.take().expect("validated above");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            debug_assert_eq!(m.shape(), grad.shape());
            for (((p, g), mv), vv) in entry
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (T::one() - beta1) * *g;
                *vv = beta2 * *vv + (T::one() - beta2) * *g * *g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Clamp every learnable value into [-c, c]. Batch-norm running statistics
/// are left alone. Idempotent.
pub fn clip_weights<T: Real>(params: &mut ParamStore<T>, c: f64) -> Result<()> {
    if c <= 0.0 || c.is_nan() {
        return Err(Error::Config(format!(
            "clip bound must be positive, got {c}"
        )));
    }
    let bound = T::from_f64(c);
    for (_, entry) in params.iter_mut() {
        if !entry.kind.is_learnable() {
            continue;
        }
        for v in entry.value.data_mut() {
            *v = (*v).max(-bound).min(bound);
        }
    }
    Ok(())
}
