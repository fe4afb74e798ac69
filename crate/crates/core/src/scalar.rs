//! Numeric abstraction used by the scoring and reporting code.
//!
//! Rates are ratios of integer edit counts, so the same code runs over
//! `f32`, `f64`, or an exact rational such as [`num_rational::Ratio<i64>`].
//! The rational instantiation is what lets regression tests assert values
//! like `6/5` or `4.17 - 4.24 == -0.07` without tolerance.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// A real-valued scalar that can hold an error rate or a score.
pub trait Scalar:
    Num + Signed + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
    /// `num / den` in this scalar type. `den` must be non-zero.
    fn ratio(num: usize, den: usize) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar")
    }

    /// Nearest representable value to `x`. Exact for floats, a best
    /// rational approximation for `Ratio`.
    fn approx(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::zero)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Arithmetic mean; `None` for an empty slice.
    fn mean(values: &[Self]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sum = values.iter().fold(Self::zero(), |acc, v| acc + *v);
        Some(sum / Self::from_count(values.len()))
    }
}

impl<T> Scalar for T where
    T: Num + Signed + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Exact rate type for regression fixtures.
pub type Exact = Ratio<i64>;

/// Error from [`parse_decimal`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a decimal number: {0:?}")]
pub struct DecimalParseError(pub String);

/// Parse a plain decimal literal (`"4.24"`, `"-0.07"`, `"12"`) into any
/// scalar, exactly when the scalar is rational.
pub fn parse_decimal<S: Scalar>(text: &str) -> Result<S, DecimalParseError> {
    let err = || DecimalParseError(text.to_string());
    let trimmed = text.trim();
    let (negative, body) = match trimmed.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, trimmed.strip_prefix('+').unwrap_or(trimmed)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    // One division of two exact integers: correctly rounded for floats,
    // exact for rationals.
    let mut numerator: u64 = 0;
    for b in int_part.bytes().chain(frac_part.bytes()) {
        numerator = numerator
            .checked_mul(10)
            .and_then(|n| n.checked_add(u64::from(b - b'0')))
            .ok_or_else(err)?;
    }
    let exponent = u32::try_from(frac_part.len()).map_err(|_| err())?;
    let denominator = 10u64.checked_pow(exponent).ok_or_else(err)?;
    let value = S::from_u64(numerator).ok_or_else(err)? / S::from_u64(denominator).ok_or_else(err)?;
    Ok(if negative { -value } else { value })
}
