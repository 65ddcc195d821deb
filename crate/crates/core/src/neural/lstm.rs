//! LSTM cell with backpropagation through time.
//!
//! Gate pre-activations are `z = W [x; h] + b` with rows ordered
//! input, forget, candidate, output.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops::{affine, outer_acc, sigmoid, transpose_matvec_acc};
use super::params::{Gradients, NetworkParams, ParamId};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lstm {
    /// `4H x (I + H)`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

/// Recurrent state `(h, c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(width: usize) -> Self {
        LstmState { hidden: vec![T::zero(); width], cell: vec![T::zero(); width] }
    }
}

#[derive(Clone, Debug)]
pub struct LstmStepCache<T> {
    xh: Vec<T>,
    cell_prev: Vec<T>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<T>,
    tanh_cell: Vec<T>,
}

/// Random orthogonal `n x n` matrix (QR of a Gaussian matrix, sign-fixed).
fn orthogonal(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl Lstm {
    /// Input weights fan-in uniform, recurrent weights orthogonal per gate,
    /// forget-gate bias 1.
    pub fn new<T: Real>(
        params: &mut NetworkParams<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let cols = inputs + hidden;
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut w = vec![T::zero(); 4 * hidden * cols];
        for gate in 0..4 {
            let rec = orthogonal(hidden, rng);
            for r in 0..hidden {
                let row = &mut w[(gate * hidden + r) * cols..(gate * hidden + r + 1) * cols];
                for x in &mut row[..inputs] {
                    *x = T::lit(rng.random_range(-bound..bound));
                }
                for c in 0..hidden {
                    row[inputs + c] = T::lit(rec[(r, c)]);
                }
            }
        }
        let mut b = vec![T::zero(); 4 * hidden];
        for x in &mut b[hidden..2 * hidden] {
            *x = T::one();
        }
        let weight = params.add(format!("{name}.weight"), 4 * hidden, cols, w);
        let bias = params.add(format!("{name}.bias"), 4 * hidden, 1, b);
        Lstm { weight, bias, inputs, hidden }
    }

    pub fn step<T: Real>(
        &self,
        params: &NetworkParams<T>,
        input: &[T],
        state: &LstmState<T>,
    ) -> Result<(LstmState<T>, LstmStepCache<T>)> {
        if input.len() != self.inputs || state.hidden.len() != self.hidden {
            return Err(Error::ShapeMismatch(format!(
                "lstm expects input {} / state {}, got {} / {}",
                self.inputs,
                self.hidden,
                input.len(),
                state.hidden.len()
            )));
        }
        let h = self.hidden;
        let mut xh = Vec::with_capacity(self.inputs + h);
        xh.extend_from_slice(input);
        xh.extend_from_slice(&state.hidden);
        let mut gates = vec![T::zero(); 4 * h];
        affine(params.data(self.weight), params.data(self.bias), &xh, &mut gates);
        for (k, z) in gates.iter_mut().enumerate() {
            *z = if (2 * h..3 * h).contains(&k) { z.tanh() } else { sigmoid(*z) };
        }
        let mut cell = vec![T::zero(); h];
        let mut tanh_cell = vec![T::zero(); h];
        let mut hidden = vec![T::zero(); h];
        for j in 0..h {
            let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            cell[j] = f * state.cell[j] + i * g;
            tanh_cell[j] = cell[j].tanh();
            hidden[j] = o * tanh_cell[j];
        }
        let cache = LstmStepCache { xh, cell_prev: state.cell.clone(), gates, tanh_cell };
        Ok((LstmState { hidden, cell }, cache))
    }

    /// Runs a whole sequence from `initial`, returning per-step hidden outputs.
    pub fn forward_sequence<T: Real>(
        &self,
        params: &NetworkParams<T>,
        inputs: &[Vec<T>],
        initial: &LstmState<T>,
    ) -> Result<(Vec<Vec<T>>, Vec<LstmStepCache<T>>)> {
        let mut state = initial.clone();
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, cache) = self.step(params, x, &state)?;
            outputs.push(next.hidden.clone());
            caches.push(cache);
            state = next;
        }
        Ok((outputs, caches))
    }

    /// Backpropagation through time. `grad_hidden[t]` is the loss gradient
    /// w.r.t. the step-`t` output; returns gradients w.r.t. each step input.
    pub fn backward_sequence<T: Real>(
        &self,
        params: &NetworkParams<T>,
        grads: &mut Gradients<T>,
        caches: &[LstmStepCache<T>],
        grad_hidden: &[Vec<T>],
    ) -> Result<Vec<Vec<T>>> {
        if caches.len() != grad_hidden.len() {
            return Err(Error::ShapeMismatch("lstm backward: sequence lengths differ".into()));
        }
        let h = self.hidden;
        let w = params.data(self.weight);
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        let mut grad_inputs = vec![Vec::new(); caches.len()];
        for t in (0..caches.len()).rev() {
            let cache = &caches[t];
            let g = &cache.gates;
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let dh = grad_hidden[t][j] + dh_next[j];
                let tc = cache.tanh_cell[j];
                let dc = dh * o * (T::one() - tc * tc) + dc_next[j];
                dz[j] = dc * gg * i * (T::one() - i);
                dz[h + j] = dc * cache.cell_prev[j] * f * (T::one() - f);
                dz[2 * h + j] = dc * i * (T::one() - gg * gg);
                dz[3 * h + j] = dh * tc * o * (T::one() - o);
                dc_next[j] = dc * f;
            }
            outer_acc(grads.get_mut(self.weight), &dz, &cache.xh);
            for (b, &d) in grads.get_mut(self.bias).iter_mut().zip(&dz) {
                *b += d;
            }
            let mut dxh = vec![T::zero(); self.inputs + h];
            transpose_matvec_acc(w, &dz, &mut dxh);
            dh_next.copy_from_slice(&dxh[self.inputs..]);
            dxh.truncate(self.inputs);
            grad_inputs[t] = dxh;
        }
        Ok(grad_inputs)
    }
}
