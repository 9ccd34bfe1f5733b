use super::tensor::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment tensors per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamStore<F>, config: AdamConfig) -> Self {
        Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Apply one update. Non-finite gradients abort before any parameter changes.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &[Tensor<F>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(
                format!("{} gradient tensors", params.len()),
                grads.len(),
            ));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(
                    format!("{} {:?}", params.name(id), params.get(id).shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", params.name(id))));
            }
        }
        self.t += 1;
        let c = self.config;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let one = F::one();
        let bc1 = F::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = F::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = F::of(c.learning_rate);
        let eps = F::of(c.eps);
        for (k, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
