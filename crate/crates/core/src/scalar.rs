//! Floating-point scalar abstraction shared by every numerical routine.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the estimators are generic over: `f32` or `f64`.
///
/// Distribution functions (p-values, quantiles) are always evaluated in
/// `f64`; only the data path is generic.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_len(n: usize) -> Self {
        Self::from_usize(n).expect("length representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// `exp(x)` for `x <= 0`, written without branches so kernel loops
    /// vectorize. Results below `exp(-708)` are not flushed to zero.
    #[inline]
    fn exp_nonpositive(x: Self) -> Self {
        Self::lit(exp_nonpositive_f64(x.as_f64()))
    }
}

impl Scalar for f32 {
    #[inline]
    fn exp_nonpositive(x: f32) -> f32 {
        exp_nonpositive_f64(x as f64) as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn exp_nonpositive(x: f64) -> f64 {
        exp_nonpositive_f64(x)
    }
}

/// Range reduction `x = k ln 2 + r`, `|r| <= ln(2)/2`, then a degree-13
/// Taylor polynomial; truncation error is below 1e-17 relative.
#[inline]
fn exp_nonpositive_f64(x: f64) -> f64 {
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let x = if x < -708.0 { -708.0 } else { x };
    let t = x * std::f64::consts::LOG2_E + ROUND;
    let k = t - ROUND;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(t.to_bits().wrapping_add(1023) << 52);
    p * scale
}

pub(crate) fn mean<T: Scalar>(x: &[T]) -> T {
    x.iter().copied().sum::<T>() / T::from_len(x.len())
}

pub(crate) fn centered<T: Scalar>(x: &[T]) -> Vec<T> {
    let m = mean(x);
    x.iter().map(|&v| v - m).collect()
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| u * v).sum()
}

/// Sample variance with the `n - 1` denominator.
pub(crate) fn sample_variance<T: Scalar>(x: &[T]) -> T {
    let m = mean(x);
    let ss: T = x.iter().map(|&v| (v - m) * (v - m)).sum();
    ss / T::from_len(x.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_matches_std() {
        let mut worst: f64 = 0.0;
        let mut x = 0.0;
        while x > -700.0 {
            let rel = (exp_nonpositive_f64(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x -= 0.0137;
        }
        assert!(worst < 4e-16, "{worst}");
        assert_eq!(exp_nonpositive_f64(0.0), 1.0);
        assert!(exp_nonpositive_f64(-1e6) < 1e-300);
    }
}
