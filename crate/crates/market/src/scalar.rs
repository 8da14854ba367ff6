//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point type. `f64` is the default throughout the workspace; `f32`
//! works for quick, low-accuracy runs.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar used by scenarios, solvers and certificates.
pub trait Real: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + 'static {
    /// Shorthand for converting an `f64` constant into `Self`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + NumAssign + Sum + Debug + Display + Default + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_convert() {
        assert_eq!(<f64 as Real>::of(1.5), 1.5);
        assert_eq!(<f32 as Real>::of(0.25), 0.25f32);
    }
}
