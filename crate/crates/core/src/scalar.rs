use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point element type used by every numeric routine in the crate: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + ndarray::ScalarOperand
    + 'static
{
    /// Lossy conversion from an f64 literal or parameter.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Cast a slice between scalar types.
pub fn cast_vec<A: Scalar, B: Scalar>(xs: &[A]) -> Vec<B> {
    xs.iter().map(|x| B::of(x.to_f64_lossy())).collect()
}
