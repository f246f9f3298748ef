//! Arithmetic backends.
//!
//! Filters, feature windows, scoring and the SGD update are written once
//! against [`Scalar`] and instantiated for `f64` (reference) and
//! [`Q6_10`] (hardware-faithful).

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::fixedpoint::{self, Wide, FRAC_BITS, Q6_10};

/// Which backend a model or run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithMode {
    Float,
    Fixed,
}

impl std::fmt::Display for ArithMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArithMode::Float => "float",
            ArithMode::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for ArithMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float" => Ok(Self::Float),
            "fixed" => Ok(Self::Fixed),
            other => Err(format!("unknown arithmetic mode `{other}` (expected float|fixed)")),
        }
    }
}

/// One term of a sliding-window sum, plus the rule for keeping the running
/// total in step with the window contents.
pub trait WindowTerm: Copy + Default + Debug + PartialEq + Send + Sync + 'static {
    /// Update `running` after `incoming` replaced `outgoing`; `window` yields
    /// the new window contents oldest first.
    fn slide<I: Iterator<Item = Self>>(running: &mut Self, incoming: Self, outgoing: Self, window: I);
}

/// Float sums are recomputed from the window in a fixed order each step, so
/// the streaming value is bit-identical to a from-scratch recomputation.
impl WindowTerm for f64 {
    #[inline]
    fn slide<I: Iterator<Item = Self>>(running: &mut Self, _incoming: Self, _outgoing: Self, window: I) {
        *running = window.fold(0.0, |acc, t| acc + t);
    }
}

/// Fixed-point terms are exact Q12.20 integers; the running total is exact.
impl WindowTerm for i64 {
    #[inline]
    fn slide<I: Iterator<Item = Self>>(running: &mut Self, incoming: Self, outgoing: Self, _window: I) {
        *running += incoming - outgoing;
    }
}

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    type Term: WindowTerm;
    /// Filter feedback state, held at accumulator precision.
    type Acc: Copy + Default + Debug + PartialEq + Send + Sync + 'static;
    const MODE: ArithMode;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// A 16-bit ADC code read as a Q6.10 word, i.e. `code / 1024`.
    fn from_code(code: i16) -> Self;

    fn abs_diff_term(cur: Self, prev: Self) -> Self::Term;
    fn square_term(y: Self) -> Self::Term;
    /// `sum * 2^exponent` narrowed to a scalar.
    fn from_window_sum(sum: Self::Term, exponent: i32) -> Self;
    fn term_to_f64(t: Self::Term) -> f64;

    /// Sum of products in the wide accumulator, narrowed once at the end.
    fn sum_of_products<I: Iterator<Item = (Self, Self)>>(pairs: I) -> Self;

    /// `a * b * 2^-shift` rounded once.
    fn scaled_product(a: Self, b: Self, shift: u32) -> Self;

    /// One Direct Form I step: `b . [x, x1, x2] + neg_a . [y1, y2]`.
    fn df1(b: [Self; 3], neg_a: [Self; 2], x: [Self; 3], y: [Self::Acc; 2]) -> Self::Acc;
    fn narrow_acc(acc: Self::Acc) -> Self;
}

impl Scalar for f64 {
    type Term = f64;
    type Acc = f64;
    const MODE: ArithMode = ArithMode::Float;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_code(code: i16) -> Self {
        f64::from(code) / f64::from(fixedpoint::ONE_RAW)
    }
    #[inline]
    fn abs_diff_term(cur: Self, prev: Self) -> f64 {
        (cur - prev).abs()
    }
    #[inline]
    fn square_term(y: Self) -> f64 {
        y * y
    }
    #[inline]
    fn from_window_sum(sum: f64, exponent: i32) -> Self {
        sum * 2f64.powi(exponent)
    }
    #[inline]
    fn term_to_f64(t: f64) -> f64 {
        t
    }
    #[inline]
    fn sum_of_products<I: Iterator<Item = (Self, Self)>>(pairs: I) -> Self {
        pairs.fold(0.0, |acc, (a, b)| acc + a * b)
    }
    #[inline]
    fn scaled_product(a: Self, b: Self, shift: u32) -> Self {
        a * b * 2f64.powi(-(shift as i32))
    }
    #[inline]
    fn df1(b: [Self; 3], neg_a: [Self; 2], x: [Self; 3], y: [f64; 2]) -> f64 {
        b[0] * x[0] + b[1] * x[1] + b[2] * x[2] + neg_a[0] * y[0] + neg_a[1] * y[1]
    }
    #[inline]
    fn narrow_acc(acc: f64) -> Self {
        acc
    }
}

impl Scalar for Q6_10 {
    type Term = i64;
    /// Q12.20 raw value.
    type Acc = i32;
    const MODE: ArithMode = ArithMode::Fixed;
    const ZERO: Self = Q6_10::ZERO;
    const ONE: Self = Q6_10::ONE;

    #[inline]
    fn from_f64(x: f64) -> Self {
        Q6_10::from_real(x)
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self.to_real()
    }
    #[inline]
    fn from_code(code: i16) -> Self {
        Q6_10::from_raw(code)
    }
    #[inline]
    fn abs_diff_term(cur: Self, prev: Self) -> i64 {
        (i64::from(cur.raw()) - i64::from(prev.raw())).abs() << FRAC_BITS
    }
    #[inline]
    fn square_term(y: Self) -> i64 {
        let r = i64::from(y.raw());
        r * r
    }
    #[inline]
    fn from_window_sum(sum: i64, exponent: i32) -> Self {
        fixedpoint::narrow_scaled(sum, exponent)
    }
    #[inline]
    fn term_to_f64(t: i64) -> f64 {
        t as f64 / f64::from(1u32 << fixedpoint::WIDE_FRAC_BITS)
    }
    #[inline]
    fn sum_of_products<I: Iterator<Item = (Self, Self)>>(pairs: I) -> Self {
        pairs.fold(Wide::ZERO, |acc, (a, b)| acc.mac(a, b)).narrow()
    }
    #[inline]
    fn scaled_product(a: Self, b: Self, shift: u32) -> Self {
        Wide::product(a, b).narrow_shr(shift)
    }
    /// Products are summed exactly at Q18.30 in 64 bits, then rounded once
    /// to Q12.20 and saturated.
    #[inline]
    fn df1(b: [Self; 3], neg_a: [Self; 2], x: [Self; 3], y: [i32; 2]) -> i32 {
        let ff: i64 = b.iter().zip(&x).map(|(c, v)| i64::from(c.raw()) * i64::from(v.raw())).sum();
        let fb: i64 = neg_a.iter().zip(&y).map(|(c, &v)| i64::from(c.raw()) * i64::from(v)).sum();
        let acc = (ff << FRAC_BITS) + fb;
        fixedpoint::round_shift_i64(acc, FRAC_BITS).clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32
    }
    #[inline]
    fn narrow_acc(acc: i32) -> Self {
        Wide::from_raw(acc).narrow()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_interpretation_agrees() {
        for code in [-32768i16, -1, 0, 1, 1024, 32767] {
            assert_eq!(<f64 as Scalar>::from_code(code), Q6_10::from_code(code).to_f64());
        }
    }

    #[test]
    fn window_terms_agree_across_backends() {
        let a = Q6_10::from_real(1.5);
        let b = Q6_10::from_real(-0.25);
        assert_eq!(Q6_10::term_to_f64(Q6_10::abs_diff_term(a, b)), 1.75);
        assert_eq!(Q6_10::term_to_f64(Q6_10::square_term(a)), 2.25);
        assert_eq!(Q6_10::from_window_sum(Q6_10::square_term(a), -1).to_f64(), 1.125);
    }

    #[test]
    fn scaled_product_rounds_once() {
        let a = Q6_10::from_real(0.75);
        let b = Q6_10::from_real(3.0);
        // 2.25 / 64 = 0.03515625 = 36 / 1024 exactly
        assert_eq!(Q6_10::scaled_product(a, b, 6).raw(), 36);
        assert_eq!(f64::scaled_product(0.75, 3.0, 6), 0.03515625);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("fixed".parse::<ArithMode>().unwrap(), ArithMode::Fixed);
        assert!("double".parse::<ArithMode>().is_err());
    }
}
