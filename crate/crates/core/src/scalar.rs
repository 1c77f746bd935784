//! Scalar abstraction so the solver stack runs in either f32 or f64.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point scalar the numerics are generic over.
///
/// Implemented for `f32` and `f64`. All literal constants in the crate go
/// through [`Real::of`], and random draws are produced in `f64` before being
/// rounded into the target scalar, so the two instantiations follow the same
/// underlying sequences.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Conversion from an `f64` constant.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant must be representable")
    }

    /// Conversion from a `usize` count.
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("count must be representable")
    }

    /// Lossy view as `f64`, used for reporting and error messages.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
