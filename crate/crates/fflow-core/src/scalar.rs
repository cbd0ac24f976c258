//! Scalar abstraction for the generic numeric core.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable in the dense-matrix statistics core.
///
/// Implemented for `f32` and `f64`; the FI pipeline uses the `f64` aliases
/// at the crate root.
pub trait Scalar: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {
    /// Lossless-enough conversion from a sample count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("sample count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
