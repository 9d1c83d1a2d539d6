//! Scalar types accepted by the generic solvers.

use std::fmt::Debug;

use num_traits::{Num, NumCast};

/// Ordered numeric type usable as a utility or a cost.
///
/// Integers give exact arithmetic; floats are accepted for user-supplied
/// scores. `share_up` must never round below the true quotient: the
/// assignment solver relies on it for an admissible bound.
pub trait Scalar: Num + NumCast + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// `self / parts`, rounded towards +infinity for integer types.
    fn share_up(self, parts: usize) -> Self;

    fn max_of(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }

    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

macro_rules! int_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn share_up(self, parts: usize) -> Self {
                let p = parts as $t;
                let q = self / p;
                if self % p != 0 && self > 0 { q + 1 } else { q }
            }
        }
    )*};
}

macro_rules! float_scalar {
    ($($t:ty),*) => {$(
        impl Scalar for $t {
            fn share_up(self, parts: usize) -> Self {
                // Division may round down by half an ulp; nudge up.
                let q = self / parts as $t;
                if q > 0.0 { q * (1.0 + <$t>::EPSILON) } else { q }
            }
        }
    )*};
}

int_scalar!(i32, i64, i128);
float_scalar!(f32, f64);
