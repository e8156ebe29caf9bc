//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`] so the same
//! code instantiates at `f32` and `f64`. The pipeline type aliases at the
//! crate root pin `f64`, which is what checkpoints and bitstreams store.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Floating-point scalar usable by tensors, transforms and likelihoods.
pub trait Scalar:
    Float + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lift an `f64` literal into this scalar type.
    fn of(v: f64) -> Self {
        Self::from(v).expect("f64 literal representable in scalar type")
    }

    /// Lower to `f64` (exact for `f64`, widening for `f32`).
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const LN_2: f64 = std::f64::consts::LN_2;

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus<F: Scalar>(x: F) -> F {
    let zero = F::zero();
    let mx = if x > zero { x } else { zero };
    mx + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid<F: Scalar>(x: F) -> F {
    let one = F::one();
    if x >= F::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf<F: Scalar>(x: F) -> F {
    let t = x.as_f64() / std::f64::consts::SQRT_2;
    F::of(0.5 * (1.0 + libm::erf(t)))
}

/// Standard normal density.
pub fn std_normal_pdf<F: Scalar>(x: F) -> F {
    let v = x.as_f64();
    F::of((-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt())
}
