//! Numeric field abstraction shared by the exact (rational) and floating paths.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, Signed, ToPrimitive, Zero};

/// Exact rational scalar used by the rational mode.
pub type Rational = BigRational;

/// A real field the solvers can run over: `f64` with tolerances or
/// `BigRational` with exact comparisons.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    /// True for exact arithmetic.
    const EXACT: bool;

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64(&self) -> f64;

    fn from_int(i: i64) -> Self;

    fn from_ratio(num: i64, den: i64) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    /// `|self| <= tol` for floats, `self == 0` for rationals.
    fn near_zero(&self, tol: f64) -> bool;

    fn is_pos_tol(&self, tol: f64) -> bool {
        !self.near_zero(tol) && self.is_positive()
    }

    fn is_neg_tol(&self, tol: f64) -> bool {
        !self.near_zero(tol) && self.is_negative()
    }

    fn is_finite_value(&self) -> bool;

    /// Parses a literal such as `0.25`, `3`, `1/3` or `-2.5e-3`.
    fn parse_literal(s: &str) -> Option<Self>;

    /// Text form that `parse_literal` reads back to an equal value.
    fn to_literal(&self) -> String;
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn from_int(i: i64) -> Self {
        i as f64
    }

    fn near_zero(&self, tol: f64) -> bool {
        self.abs() <= tol
    }

    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }

    fn parse_literal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: f64 = n.trim().parse().ok()?;
            let d: f64 = d.trim().parse().ok()?;
            if d == 0.0 {
                return None;
            }
            return Some(n / d);
        }
        s.parse().ok()
    }

    fn to_literal(&self) -> String {
        // `{}` on f64 prints the shortest representation that round-trips.
        format!("{}", self)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_f64_lossy(x: f64) -> Self {
        // The shortest decimal that round-trips is the literal a user wrote
        // in almost every case, so `0.1` maps to 1/10 rather than the binary
        // expansion.
        parse_decimal(&format!("{}", x))
            .or_else(|| BigRational::from_f64(x))
            .unwrap_or_else(BigRational::zero)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_int(i: i64) -> Self {
        BigRational::from_integer(BigInt::from(i))
    }

    fn near_zero(&self, _tol: f64) -> bool {
        self.is_zero()
    }

    fn is_finite_value(&self) -> bool {
        true
    }

    fn parse_literal(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n = parse_decimal(n.trim())?;
            let d = parse_decimal(d.trim())?;
            if d.is_zero() {
                return None;
            }
            return Some(n / d);
        }
        parse_decimal(s)
    }

    fn to_literal(&self) -> String {
        if self.denom().is_one() {
            self.numer().to_string()
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }
}

/// Exact parse of a decimal literal with optional exponent.
fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: String = format!("{}{}", int_part, frac_part);
    let numer = BigInt::from_str(if all.is_empty() { "0" } else { &all }).ok()?;
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -value } else { value })
}

/// Sum of a slice.
pub fn sum<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, x| acc + x.clone())
}

/// Converts a whole vector to `f64`.
pub fn to_f64_vec<T: Scalar>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(Scalar::to_f64).collect()
}
