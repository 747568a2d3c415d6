//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All clustering, mixture, projection and evaluation code is written against
//! [`Scalar`], so the same algorithms run in `f32` or `f64`. The pipeline itself
//! promotes stored `f32` vectors to `f64`.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    'static + Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Send + Sync + Debug + Display + LowerExp
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal is representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
