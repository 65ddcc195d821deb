//! Scalar abstraction shared by the simulator, the controller math and the
//! network engine.

use nalgebra as na;
use num_traits as nt;

/// Real scalar usable by every numeric module: `f32` or `f64`.
pub trait Real:
    na::RealField + Copy + nt::FromPrimitive + nt::ToPrimitive + nt::FloatConst + Default
{
    /// Converts an `f64` literal into `Self`.
    fn lit(x: f64) -> Self;

    /// Lossy conversion back to `f64`, for reporting and serialization.
    fn to_f64_lossy(self) -> f64;

    fn is_finite_value(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline(always)]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline(always)]
            fn is_finite_value(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Largest absolute entry of a slice.
pub fn max_abs<T: Real>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}
