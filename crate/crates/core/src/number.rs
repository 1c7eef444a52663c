//! Measure values: exact rationals or natural-log magnitudes.
//!
//! Towers built from rational height sequences are handled with exact
//! `BigRational` arithmetic. Sequences such as `a_k = exp(-8^{l+1})` are far
//! below the `f64` range, so they are carried as logarithms instead. Zero is
//! `ln = -inf` in log form and never arises from underflow: log values are
//! only ever added, never exponentiated back.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumberError {
    #[error("value {0} cannot be represented exactly as a rational")]
    NotExact(String),
    #[error("negative result in log-space subtraction ({0} - {1})")]
    NegativeDifference(f64, f64),
    #[error("cannot parse number `{0}`")]
    Parse(String),
    #[error(
        "unsupported numeric mode `{0}` (expected `rational` or `log:<bits>` with bits in 1..=53)"
    )]
    Mode(String),
}

/// Natural logarithm of a nonnegative real. `-inf` encodes zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogValue(f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);

    pub fn from_ln(ln: f64) -> Self {
        debug_assert!(!ln.is_nan(), "NaN log value");
        LogValue(ln)
    }

    pub fn from_f64(x: f64) -> Self {
        assert!(x >= 0.0, "log value of a negative number");
        LogValue(x.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn add(self, other: LogValue) -> LogValue {
        LogValue(log_add_exp(self.0, other.0))
    }

    /// `ln(e^self - e^other)`, stable for nearly equal arguments.
    pub fn checked_sub(self, other: LogValue) -> Result<LogValue, NumberError> {
        if other.is_zero() {
            return Ok(self);
        }
        let d = other.0 - self.0;
        if d > 0.0 {
            return Err(NumberError::NegativeDifference(self.0, other.0));
        }
        if d == 0.0 {
            return Ok(LogValue::ZERO);
        }
        Ok(LogValue(self.0 + (-d.exp_m1()).ln()))
    }

    pub fn mul(self, other: LogValue) -> LogValue {
        if self.is_zero() || other.is_zero() {
            return LogValue::ZERO;
        }
        LogValue(self.0 + other.0)
    }

    pub fn div(self, other: LogValue) -> LogValue {
        assert!(!other.is_zero(), "division by zero measure");
        if self.is_zero() {
            return LogValue::ZERO;
        }
        LogValue(self.0 - other.0)
    }
}

/// `ln(e^a + e^b)` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}`; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + xs.iter().map(|x| (x - hi).exp()).sum::<f64>().ln()
}

fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return (x.to_u64().expect("fits") as f64).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().expect("fits") as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Natural log of a nonnegative rational, accurate to a few ulps even when the
/// numerator and denominator are far outside the `f64` range.
pub fn ln_rational(x: &BigRational) -> f64 {
    assert!(!x.is_negative(), "log of a negative rational");
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    ln_biguint(x.numer().magnitude()) - ln_biguint(x.denom().magnitude())
}

/// Parses `"3"`, `"-1/4"` or a finite decimal such as `"0.125"` exactly.
pub fn parse_rational(s: &str) -> Result<BigRational, NumberError> {
    let s = s.trim();
    let err = || NumberError::Parse(s.to_string());
    if let Some((n, d)) = s.split_once('/') {
        let n = BigInt::from_str(n.trim()).map_err(|_| err())?;
        let d = BigInt::from_str(d.trim()).map_err(|_| err())?;
        if d.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let negative = int.trim_start().starts_with('-');
        let digits = format!("{}{}", int.trim_start_matches(['-', '+']), frac);
        if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let mut n = BigInt::from_str(&digits).map_err(|_| err())?;
        if negative {
            n = -n;
        }
        let d = num_traits::pow(BigInt::from(10u32), frac.len());
        return Ok(BigRational::new(n, d));
    }
    BigInt::from_str(s)
        .map(BigRational::from_integer)
        .map_err(|_| err())
}

/// A measure (or any nonnegative quantity) in one of the two representations.
#[derive(Clone, Debug)]
pub enum NumberValue {
    Exact(BigRational),
    Log(LogValue),
}

impl NumberValue {
    pub fn zero() -> Self {
        NumberValue::Exact(BigRational::zero())
    }

    pub fn one() -> Self {
        NumberValue::Exact(BigRational::one())
    }

    pub fn from_ln(ln: f64) -> Self {
        NumberValue::Log(LogValue::from_ln(ln))
    }

    pub fn ratio(n: i64, d: i64) -> Self {
        NumberValue::Exact(BigRational::new(n.into(), d.into()))
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, NumberValue::Exact(_))
    }

    pub fn as_exact(&self) -> Option<&BigRational> {
        match self {
            NumberValue::Exact(r) => Some(r),
            NumberValue::Log(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            NumberValue::Exact(r) => r.is_zero(),
            NumberValue::Log(l) => l.is_zero(),
        }
    }

    pub fn is_positive(&self) -> bool {
        match self {
            NumberValue::Exact(r) => r.is_positive(),
            NumberValue::Log(l) => !l.is_zero(),
        }
    }

    pub fn ln(&self) -> f64 {
        match self {
            NumberValue::Exact(r) => ln_rational(r),
            NumberValue::Log(l) => l.ln(),
        }
    }

    pub fn to_log(&self) -> LogValue {
        match self {
            NumberValue::Exact(r) => LogValue(ln_rational(r)),
            NumberValue::Log(l) => *l,
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            NumberValue::Exact(r) => r.to_f64().unwrap_or_else(|| ln_rational(r).exp()),
            NumberValue::Log(l) => l.to_f64(),
        }
    }

    pub fn add(&self, other: &NumberValue) -> NumberValue {
        match (self, other) {
            (NumberValue::Exact(a), NumberValue::Exact(b)) => NumberValue::Exact(a + b),
            _ => NumberValue::Log(self.to_log().add(other.to_log())),
        }
    }

    pub fn mul(&self, other: &NumberValue) -> NumberValue {
        match (self, other) {
            (NumberValue::Exact(a), NumberValue::Exact(b)) => NumberValue::Exact(a * b),
            _ => NumberValue::Log(self.to_log().mul(other.to_log())),
        }
    }

    pub fn div(&self, other: &NumberValue) -> NumberValue {
        match (self, other) {
            (NumberValue::Exact(a), NumberValue::Exact(b)) => NumberValue::Exact(a / b),
            _ => NumberValue::Log(self.to_log().div(other.to_log())),
        }
    }

    pub fn checked_sub(&self, other: &NumberValue) -> Result<NumberValue, NumberError> {
        match (self, other) {
            (NumberValue::Exact(a), NumberValue::Exact(b)) => {
                let d = a - b;
                if d.is_negative() {
                    Err(NumberError::NegativeDifference(
                        ln_rational(a),
                        ln_rational(b),
                    ))
                } else {
                    Ok(NumberValue::Exact(d))
                }
            }
            _ => self
                .to_log()
                .checked_sub(other.to_log())
                .map(NumberValue::Log),
        }
    }

    pub fn recip(&self) -> NumberValue {
        NumberValue::one().div(self)
    }
}

impl PartialEq for NumberValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for NumberValue {}

impl PartialOrd for NumberValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NumberValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (NumberValue::Exact(a), NumberValue::Exact(b)) => a.cmp(b),
            _ => self.ln().total_cmp(&other.ln()),
        }
    }
}

impl fmt::Display for NumberValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumberValue::Exact(r) => write!(f, "{}", r),
            NumberValue::Log(l) if l.is_zero() => write!(f, "0"),
            NumberValue::Log(l) => write!(f, "exp({})", l.ln()),
        }
    }
}

impl Serialize for NumberValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("NumberValue", 2)?;
        match self {
            NumberValue::Exact(r) => st.serialize_field("exact", &r.to_string())?,
            NumberValue::Log(_) => st.serialize_field("exact", &Option::<String>::None)?,
        }
        st.serialize_field("ln", &crate::fmt_ext::ExtF64(self.ln()))?;
        st.end()
    }
}

/// Arithmetic needed by the dynamic programs, implemented for both exact and
/// log-space masses.
pub trait Mass: Clone + Send + Sync + fmt::Debug {
    fn empty() -> Self;
    fn unit() -> Self;
    fn is_empty(&self) -> bool;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, other: &Self) -> Self;
    fn ln(&self) -> f64;
    fn from_number(v: &NumberValue) -> Result<Self, NumberError>;
    fn into_number(self) -> NumberValue;
}

impl Mass for BigRational {
    fn empty() -> Self {
        Zero::zero()
    }
    fn unit() -> Self {
        One::one()
    }
    fn is_empty(&self) -> bool {
        Zero::is_zero(self)
    }
    fn plus(&self, other: &Self) -> Self {
        self + other
    }
    fn times(&self, other: &Self) -> Self {
        self * other
    }
    fn ln(&self) -> f64 {
        ln_rational(self)
    }
    fn from_number(v: &NumberValue) -> Result<Self, NumberError> {
        v.as_exact()
            .cloned()
            .ok_or_else(|| NumberError::NotExact(v.to_string()))
    }
    fn into_number(self) -> NumberValue {
        NumberValue::Exact(self)
    }
}

impl Mass for LogValue {
    fn empty() -> Self {
        LogValue::ZERO
    }
    fn unit() -> Self {
        LogValue::ONE
    }
    fn is_empty(&self) -> bool {
        LogValue::is_zero(*self)
    }
    fn plus(&self, other: &Self) -> Self {
        LogValue::add(*self, *other)
    }
    fn times(&self, other: &Self) -> Self {
        LogValue::mul(*self, *other)
    }
    fn ln(&self) -> f64 {
        self.0
    }
    fn from_number(v: &NumberValue) -> Result<Self, NumberError> {
        Ok(v.to_log())
    }
    fn into_number(self) -> NumberValue {
        NumberValue::Log(self)
    }
}

/// How the exact engines carry measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NumericMode {
    Rational,
    Log { bits: u32 },
}

impl NumericMode {
    pub const MAX_LOG_BITS: u32 = f64::MANTISSA_DIGITS;

    /// Relative precision of one log-space operation.
    pub fn precision(self) -> f64 {
        match self {
            NumericMode::Rational => 0.0,
            NumericMode::Log { bits } => 2f64.powi(-(bits as i32)),
        }
    }
}

impl Default for NumericMode {
    fn default() -> Self {
        NumericMode::Log {
            bits: Self::MAX_LOG_BITS,
        }
    }
}

impl FromStr for NumericMode {
    type Err = NumberError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "rational" {
            return Ok(NumericMode::Rational);
        }
        if s == "log" {
            return Ok(NumericMode::default());
        }
        let bits = s
            .strip_prefix("log:")
            .and_then(|b| b.parse::<u32>().ok())
            .filter(|b| (1..=Self::MAX_LOG_BITS).contains(b))
            .ok_or_else(|| NumberError::Mode(s.to_string()))?;
        Ok(NumericMode::Log { bits })
    }
}

impl fmt::Display for NumericMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericMode::Rational => write!(f, "rational"),
            NumericMode::Log { bits } => write!(f, "log:{bits}"),
        }
    }
}

/// Converts a `BigRational` that fits into `f64` range; used for reporting.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let sign = if r.numer().sign() == Sign::Minus {
        -1.0
    } else {
        1.0
    };
    sign * ln_rational(&r.abs()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_of_huge_rationals() {
        let x = BigRational::new(BigInt::from(1), num_traits::pow(BigInt::from(2), 3000));
        assert!((ln_rational(&x) + 3000.0 * std::f64::consts::LN_2).abs() < 1e-9);
        assert_eq!(ln_rational(&BigRational::zero()), f64::NEG_INFINITY);
    }

    #[test]
    fn log_difference_is_stable() {
        let a = LogValue::from_ln(-8.0);
        let b = LogValue::from_ln(-64.0);
        let d = a.checked_sub(b).unwrap();
        let expected = -8.0 + (1.0 - (-56f64).exp()).ln();
        assert!((d.ln() - expected).abs() < 1e-15);
        assert!(b.checked_sub(a).is_err());
        assert!(a.checked_sub(a).unwrap().is_zero());
    }

    #[test]
    fn parse_forms() {
        assert_eq!(
            parse_rational("1/2").unwrap(),
            BigRational::new(1.into(), 2.into())
        );
        assert_eq!(
            parse_rational("0.125").unwrap(),
            BigRational::new(1.into(), 8.into())
        );
        assert_eq!(
            parse_rational("-0.5").unwrap(),
            BigRational::new((-1).into(), 2.into())
        );
        assert_eq!(
            parse_rational("7").unwrap(),
            BigRational::from_integer(7.into())
        );
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("abc").is_err());
    }

    #[test]
    fn ordering_is_consistent_across_representations() {
        let exact = NumberValue::ratio(1, 4);
        let log = NumberValue::from_ln((0.25f64).ln() - 1e-9);
        assert!(log < exact);
        assert!(NumberValue::zero() < log);
        assert_eq!(NumberValue::zero(), NumberValue::Log(LogValue::ZERO));
    }

    #[test]
    fn modes_parse() {
        assert_eq!(
            "rational".parse::<NumericMode>().unwrap(),
            NumericMode::Rational
        );
        assert_eq!(
            "log:40".parse::<NumericMode>().unwrap(),
            NumericMode::Log { bits: 40 }
        );
        assert!("log:80".parse::<NumericMode>().is_err());
        assert!("float".parse::<NumericMode>().is_err());
    }

    #[test]
    fn log_sum_exp_handles_empty_and_infinite() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert!((log_sum_exp(&[0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(
            (log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + std::f64::consts::LN_2)).abs() < 1e-12
        );
    }
}
