//! Scalar abstraction used by all numeric code in this crate.
//!
//! Everything downstream of the problem definition is generic over the
//! floating-point type; `f64` is the type the CLI binds.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar type the toolkit computes with.
pub trait Scalar:
    RealField
    + Copy
    + Default
    + Debug
    + Display
    + LowerExp
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Send
    + Sync
    + 'static
{
    /// Machine epsilon of the concrete type.
    fn machine_epsilon() -> Self;

    /// Lossy conversion from `f64`, used for constants and configuration values.
    fn from_config(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 must convert")
    }

    /// Lossy conversion to `f64` for reporting.
    fn to_report(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}

/// Scalars the conic backend can solve with.
pub trait SolverScalar: Scalar + clarabel::algebra::FloatT {}

impl SolverScalar for f32 {}
impl SolverScalar for f64 {}

/// Shorthand for casting literals into a generic scalar.
pub fn cast<T: Scalar>(value: f64) -> T {
    T::from_config(value)
}
