use serde::{Deserialize, Serialize};

use super::params::{Gradients, NetworkParams};
use crate::error::{Error, Result};
use crate::scalar::Real;

fn check_finite<T: Real>(params: &NetworkParams<T>, grads: &Gradients<T>) -> Result<()> {
    match grads.first_non_finite() {
        Some(i) => Err(Error::NonFiniteGradient { block: params.blocks()[i].name.clone() }),
        None => Ok(()),
    }
}

/// Plain gradient descent step. Leaves parameters untouched on non-finite gradients.
pub fn sgd_update<T: Real>(params: &mut NetworkParams<T>, grads: &Gradients<T>, lr: T) -> Result<()> {
    check_finite(params, grads)?;
    for (block, g) in params.blocks_mut().iter_mut().zip(grads.blocks()) {
        for (p, &gv) in block.data.iter_mut().zip(g) {
            *p -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with per-block moment estimates and bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &NetworkParams<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = params.blocks().iter().map(|b| vec![T::zero(); b.len()]).collect();
        Adam { config, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>) -> Result<()> {
        check_finite(params, grads)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = T::lit(1.0 - beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - beta2.powi(self.t as i32));
        let (b1, b2, lr, eps) = (T::lit(beta1), T::lit(beta2), T::lit(lr), T::lit(eps));
        for (((block, g), m), v) in
            params.blocks_mut().iter_mut().zip(grads.blocks()).zip(&mut self.m).zip(&mut self.v)
        {
            for (((p, &gv), mv), vv) in block.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
