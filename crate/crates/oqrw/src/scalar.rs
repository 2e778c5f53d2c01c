//! Real scalar abstraction: `f32` or `f64`.

use nalgebra::RealField;
use num_traits::FromPrimitive;

/// Real scalar the whole crate is generic over.
///
/// `RealField` supplies the field and elementary-function operations needed
/// by the dense linear algebra; `FromPrimitive` converts the literal
/// tolerances baked into the defaults.
pub trait Scalar: RealField + FromPrimitive + Copy {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into the crate scalar.
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite f64 literal converts to scalar")
}

/// Converts a scalar back to `f64` for reporting.
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_subset().unwrap_or(f64::NAN)
}
