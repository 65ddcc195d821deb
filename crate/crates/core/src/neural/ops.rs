//! Row-major dense kernels.

use crate::scalar::Real;

/// `out = W x + b` for a `rows x cols` matrix `w`.
#[inline]
pub fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for ((o, row), &bias) in out.iter_mut().zip(w.chunks_exact(cols)).zip(b) {
        *o = bias + dot(row, x);
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Four accumulators keep the loop vectorizable.
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += Wᵀ g`.
#[inline]
pub fn transpose_matvec_acc<T: Real>(w: &[T], g: &[T], out: &mut [T]) {
    let cols = out.len();
    for (row, &gr) in w.chunks_exact(cols).zip(g) {
        if gr == T::zero() {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * gr;
        }
    }
}

/// `gw += g xᵀ`.
#[inline]
pub fn outer_acc<T: Real>(gw: &mut [T], g: &[T], x: &[T]) {
    let cols = x.len();
    for (row, &gr) in gw.chunks_exact_mut(cols).zip(g) {
        if gr == T::zero() {
            continue;
        }
        for (o, &xv) in row.iter_mut().zip(x) {
            *o += gr * xv;
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
