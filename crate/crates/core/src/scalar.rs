//! Scalar abstraction shared by the logic kernel, box geometry and training.
//!
//! Everything numeric that carries learnable parameters is generic over
//! [`Scalar`], so the same graph can be evaluated in `f32` for speed or in
//! `f64` for gradient validation. Data-side quantities (feature tables,
//! metrics) stay in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal or data value.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Logistic function, evaluated without overflow for large |z|.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)`, the non-negativity reparameterization used for weights,
/// slacks and box offsets. Its derivative is [`sigmoid`].
#[inline]
pub fn softplus<T: Scalar>(z: T) -> T {
    // max(z, 0) + ln(1 + e^{-|z|})
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for strictly positive `y`.
#[inline]
pub fn inv_softplus<T: Scalar>(y: T) -> T {
    // ln(e^y - 1) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}

/// Inverse of [`sigmoid`] for `p` in (0, 1).
#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[inline]
pub fn clamp01<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_form() {
        for &z in &[-30.0f64, -2.0, 0.0, 0.5, 3.0, 40.0] {
            let naive = (1.0 + z.exp()).ln();
            assert!((softplus(z) - naive).abs() < 1e-12, "z={z}");
        }
    }

    #[test]
    fn inverses_round_trip() {
        for &y in &[1e-3f64, 0.26, 1.0, 7.5] {
            assert!((softplus(inv_softplus(y)) - y).abs() < 1e-12);
        }
        for &p in &[0.01f64, 0.5, 0.9] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable_in_f32() {
        assert_eq!(sigmoid(-200.0f32), 0.0);
        assert_eq!(sigmoid(200.0f32), 1.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }
}
