//! Scalar abstraction so the numeric core runs in either f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float as NumFloat, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the model math.
///
/// The whole pipeline is generic over this trait: verification suites run in
/// `f64` where tight tolerances matter, training runs in `f32` for speed.
pub trait Float:
    NumFloat + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Short dtype tag recorded in checkpoints ("f32" / "f64").
    const DTYPE: &'static str;

    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }

    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize converts to scalar")
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }
}

impl Float for f32 {
    const DTYPE: &'static str = "f32";
}

impl Float for f64 {
    const DTYPE: &'static str = "f64";
}
