//! Scalar abstraction for the glucose math.
//!
//! Every computation in [`crate::data`], [`crate::metrics`] and
//! [`crate::aggregation`] is written against [`Scalar`] so the same code runs
//! over `f32` (compact on-device storage) and `f64` (ground-truth generation).
//! The wire formats always use `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point glucose scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from a literal constant.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count fits scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// The `-1` "no data" sentinel.
    fn sentinel() -> Self {
        -Self::one()
    }

    fn is_sentinel(self) -> bool {
        self == Self::sentinel()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sentinel value used on the wire for "no data" or "missing modality".
pub const SENTINEL: f64 = -1.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinel_roundtrip() {
        assert!(f32::sentinel().is_sentinel());
        assert_eq!(f64::sentinel().as_f64(), SENTINEL);
        assert_eq!(f32::lit(0.5), 0.5f32);
    }
}
