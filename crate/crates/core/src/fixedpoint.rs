//! Q6.10 fixed-point arithmetic.
//!
//! A [`Q6_10`] is a 16-bit signed word with 6 integer bits and 10 fractional
//! bits, value `raw / 1024`. Every operation saturates at the range limits
//! instead of wrapping. Products and sums of products are carried in a
//! [`Wide`] Q12.20 accumulator (32-bit) and only narrowed back to Q6.10 at
//! the end, with round-half-away-from-zero.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Fractional bits of a [`Q6_10`].
pub const FRAC_BITS: u32 = 10;
/// `1.0` in raw units.
pub const ONE_RAW: i16 = 1 << FRAC_BITS;
/// Fractional bits of the [`Wide`] accumulator.
pub const WIDE_FRAC_BITS: u32 = 2 * FRAC_BITS;

/// 16-bit signed Q6.10 scalar.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
#[allow(non_camel_case_types)]
pub struct Q6_10(i16);

impl Q6_10 {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(ONE_RAW);
    pub const MAX: Self = Self(i16::MAX);
    pub const MIN: Self = Self(i16::MIN);
    /// Smallest positive step, `2^-10`.
    pub const EPSILON: Self = Self(1);

    #[inline]
    pub const fn from_raw(raw: i16) -> Self {
        Self(raw)
    }

    #[inline]
    pub const fn raw(self) -> i16 {
        self.0
    }

    /// Nearest representable value, ties away from zero, saturated.
    /// NaN maps to zero.
    pub fn from_real(x: f64) -> Self {
        if x.is_nan() {
            return Self::ZERO;
        }
        let scaled = (x * f64::from(ONE_RAW)).round();
        Self(scaled.clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16)
    }

    #[inline]
    pub fn to_real(self) -> f64 {
        f64::from(self.0) / f64::from(ONE_RAW)
    }

    #[inline]
    pub fn saturating_add(self, rhs: Self) -> Self {
        Self(self.0.saturating_add(rhs.0))
    }

    #[inline]
    pub fn saturating_sub(self, rhs: Self) -> Self {
        Self(self.0.saturating_sub(rhs.0))
    }

    /// Exact 32-bit product rounded to Q6.10 and saturated.
    #[inline]
    pub fn saturating_mul(self, rhs: Self) -> Self {
        Wide::product(self, rhs).narrow()
    }

    /// Arithmetic right shift of the raw word. `k` must be in `0..=15`.
    #[inline]
    pub fn shr(self, k: u32) -> Self {
        debug_assert!(k <= 15, "shift out of range: {k}");
        Self(self.0 >> k.min(15))
    }

    #[inline]
    pub fn abs(self) -> Self {
        Self(self.0.saturating_abs())
    }
}

impl fmt::Debug for Q6_10 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q6_10({} = {})", self.0, self.to_real())
    }
}

impl fmt::Display for Q6_10 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_real(), f)
    }
}

impl Add for Q6_10 {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.saturating_add(rhs)
    }
}

impl Sub for Q6_10 {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.saturating_sub(rhs)
    }
}

impl Mul for Q6_10 {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.saturating_mul(rhs)
    }
}

impl Neg for Q6_10 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self(self.0.saturating_neg())
    }
}

/// Round-half-away-from-zero division of `v` by `2^k` (`k >= 1`).
#[inline]
pub(crate) fn round_shift_i64(v: i64, k: u32) -> i64 {
    if k == 0 {
        return v;
    }
    let half = 1i64 << (k - 1);
    if v >= 0 {
        (v + half) >> k
    } else {
        -((-v + half) >> k)
    }
}

#[inline]
pub(crate) fn saturate_i16(v: i64) -> i16 {
    v.clamp(i64::from(i16::MIN), i64::from(i16::MAX)) as i16
}

/// 32-bit Q12.20 accumulator for products of two [`Q6_10`] values.
#[derive(Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Wide(i32);

impl Wide {
    pub const ZERO: Self = Self(0);

    #[inline]
    pub const fn from_raw(raw: i32) -> Self {
        Self(raw)
    }

    #[inline]
    pub const fn raw(self) -> i32 {
        self.0
    }

    /// Exact product; always representable in Q12.20.
    #[inline]
    pub fn product(a: Q6_10, b: Q6_10) -> Self {
        Self(i32::from(a.0) * i32::from(b.0))
    }

    /// Promote a Q6.10 value without loss.
    #[inline]
    pub fn from_q(a: Q6_10) -> Self {
        Self(i32::from(a.0) << FRAC_BITS)
    }

    #[inline]
    pub fn saturating_add(self, rhs: Self) -> Self {
        Self(self.0.saturating_add(rhs.0))
    }

    /// `self + a * b`, saturating.
    #[inline]
    pub fn mac(self, a: Q6_10, b: Q6_10) -> Self {
        self.saturating_add(Self::product(a, b))
    }

    /// Round to Q6.10 and saturate.
    #[inline]
    pub fn narrow(self) -> Q6_10 {
        Q6_10(saturate_i16(round_shift_i64(i64::from(self.0), FRAC_BITS)))
    }

    /// Narrow `self * 2^-k` to Q6.10 in one rounding step.
    #[inline]
    pub fn narrow_shr(self, k: u32) -> Q6_10 {
        Q6_10(saturate_i16(round_shift_i64(i64::from(self.0), FRAC_BITS + k)))
    }

    pub fn to_real(self) -> f64 {
        f64::from(self.0) / f64::from(1u32 << WIDE_FRAC_BITS)
    }
}

/// Narrow an exact Q12.20 quantity held in an `i64` after scaling by
/// `2^exponent`. Used for sliding-window sums that can exceed the 32-bit
/// accumulator before feature scaling is applied.
pub fn narrow_scaled(q12_20: i64, exponent: i32) -> Q6_10 {
    let shift = FRAC_BITS as i32 - exponent;
    let raw = if shift >= 0 { round_shift_i64(q12_20, shift as u32) } else { q12_20.saturating_mul(1i64 << (-shift).min(62)) };
    Q6_10(saturate_i16(raw))
}
