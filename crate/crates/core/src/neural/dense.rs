use rand::Rng;

use super::ops::{affine, outer_acc, transpose_matvec_acc};
use super::params::{Gradients, NetworkParams, ParamId};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer `y = act(W x + b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Values kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    pub input: Vec<T>,
    pub output: Vec<T>,
}

impl Dense {
    pub fn new<T: Real>(
        params: &mut NetworkParams<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.uniform_fan_in(format!("{name}.weight"), outputs, inputs, inputs, rng);
        let bias = params.zeros(format!("{name}.bias"), outputs, 1);
        Dense { weight, bias, inputs, outputs, activation }
    }

    pub fn forward<T: Real>(&self, params: &NetworkParams<T>, input: &[T]) -> Result<DenseCache<T>> {
        if input.len() != self.inputs {
            return Err(Error::ShapeMismatch(format!(
                "dense layer expects {} inputs, got {}",
                self.inputs,
                input.len()
            )));
        }
        let mut output = vec![T::zero(); self.outputs];
        affine(params.data(self.weight), params.data(self.bias), input, &mut output);
        if self.activation == Activation::Relu {
            for y in &mut output {
                *y = y.max(T::zero());
            }
        }
        Ok(DenseCache { input: input.to_vec(), output })
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub fn backward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        grads: &mut Gradients<T>,
        cache: &DenseCache<T>,
        grad_out: &[T],
    ) -> Result<Vec<T>> {
        if grad_out.len() != self.outputs {
            return Err(Error::ShapeMismatch(format!(
                "dense layer has {} outputs, got gradient of {}",
                self.outputs,
                grad_out.len()
            )));
        }
        let g: Vec<T> = match self.activation {
            Activation::Identity => grad_out.to_vec(),
            Activation::Relu => grad_out
                .iter()
                .zip(&cache.output)
                .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                .collect(),
        };
        outer_acc(grads.get_mut(self.weight), &g, &cache.input);
        for (b, &gv) in grads.get_mut(self.bias).iter_mut().zip(&g) {
            *b += gv;
        }
        let mut grad_in = vec![T::zero(); self.inputs];
        transpose_matvec_acc(params.data(self.weight), &g, &mut grad_in);
        Ok(grad_in)
    }
}
