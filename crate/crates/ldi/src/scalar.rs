//! Scalar abstraction for the numeric kernels.

use std::fmt::{Debug, Display};

/// Floating point scalar the interval, expression and geometry kernels are
/// generic over. `ulp_up`/`ulp_down` step one representable value outward and
/// are what makes one-ULP outward rounding portable.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn ulp_up(self) -> Self;
    fn ulp_down(self) -> Self;

    /// Conversion from an `f64` constant; panics only for values outside the
    /// type's range, which no constant in this crate is.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable")
    }
}

impl Real for f64 {
    fn ulp_up(self) -> f64 {
        self.next_up()
    }
    fn ulp_down(self) -> f64 {
        self.next_down()
    }
}

impl Real for f32 {
    fn ulp_up(self) -> f32 {
        self.next_up()
    }
    fn ulp_down(self) -> f32 {
        self.next_down()
    }
}

#[cfg(test)]
mod tests {
    use super::Real;

    #[test]
    fn ulp_steps_are_adjacent() {
        assert!(1.0f64.ulp_up() > 1.0);
        assert!(1.0f64.ulp_down() < 1.0);
        assert_eq!(1.0f64.ulp_up().ulp_down(), 1.0);
        assert_eq!((-2.5f32).ulp_down().ulp_up(), -2.5f32);
        // smallest positive subnormal
        assert_eq!(0.0f64.ulp_up(), f64::MIN_POSITIVE * f64::EPSILON);
    }
}
