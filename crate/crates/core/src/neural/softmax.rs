use crate::scalar::Real;

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::min_value().unwrap(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().fold(T::zero(), |a, &x| a + x);
    exps.into_iter().map(|x| x / total).collect()
}

/// Gradient w.r.t. the logits given the softmax output `probs` and the
/// gradient w.r.t. `probs`.
pub fn softmax_backward<T: Real>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let inner = probs.iter().zip(grad_probs).fold(T::zero(), |a, (&p, &g)| a + p * g);
    probs.iter().zip(grad_probs).map(|(&p, &g)| p * (g - inner)).collect()
}
