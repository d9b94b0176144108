//! Exact rational amounts.
//!
//! Every quantity, weight and nutrient value in the pipeline is an [`Amount`]:
//! an arbitrary-precision rational. Sums are therefore independent of the
//! order of addition. Values serialize as strings: a plain decimal when the
//! value has a terminating decimal expansion, `p/q` otherwise.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Amount(BigRational);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed number {text:?} at offset {offset}")]
pub struct AmountParseError {
    pub text: String,
    pub offset: usize,
}

impl Amount {
    pub fn zero() -> Self {
        Amount(BigRational::zero())
    }

    pub fn one() -> Self {
        Amount(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Amount(BigRational::from_integer(BigInt::from(n)))
    }

    /// `numer / denom`. Panics on a zero denominator.
    pub fn ratio(numer: i64, denom: i64) -> Self {
        Amount(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_rational(r: BigRational) -> Self {
        Amount(r)
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn abs(&self) -> Amount {
        Amount(self.0.abs())
    }

    pub fn min(self, other: Amount) -> Amount {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Amount) -> Amount {
        if other > self {
            other
        } else {
            self
        }
    }

    /// Checked division; `None` when `rhs` is zero.
    pub fn checked_div(&self, rhs: &Amount) -> Option<Amount> {
        if rhs.is_zero() {
            None
        } else {
            Some(Amount(&self.0 / &rhs.0))
        }
    }

    pub fn midpoint(a: &Amount, b: &Amount) -> Amount {
        Amount((&a.0 + &b.0) / BigRational::from_integer(BigInt::from(2)))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Parses `12`, `12.5`, `.5`, `-3`, `3/4` and `1.5/2`.
    pub fn parse(text: &str) -> Result<Amount, AmountParseError> {
        let t = text.trim();
        let lead = text.len() - text.trim_start().len();
        if let Some((n, d)) = t.split_once('/') {
            let num = parse_decimal(n.trim(), lead)?;
            let den_off = lead + n.len() + 1;
            let den = parse_decimal(d.trim(), den_off)?;
            if den.is_zero() {
                return Err(AmountParseError {
                    text: text.to_string(),
                    offset: den_off,
                });
            }
            return Ok(Amount(num / den));
        }
        parse_decimal(t, lead).map(Amount).map_err(|e| AmountParseError {
            text: text.to_string(),
            offset: e.offset,
        })
    }

    /// True when the value has a finite decimal expansion.
    pub fn is_terminating(&self) -> bool {
        let mut d = self.0.denom().clone();
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        while d.is_even() {
            d /= &two;
        }
        while (&d % &five).is_zero() {
            d /= &five;
        }
        d.is_one()
    }

    /// Exact textual form used for storage.
    pub fn to_exact_string(&self) -> String {
        if self.0.is_integer() {
            return self.0.numer().to_string();
        }
        if !self.is_terminating() {
            return format!("{}/{}", self.0.numer(), self.0.denom());
        }
        let mut digits = 0usize;
        let mut scaled = self.0.clone();
        let ten = BigRational::from_integer(BigInt::from(10));
        while !scaled.is_integer() {
            scaled *= &ten;
            digits += 1;
        }
        format_fixed(scaled.numer(), digits)
    }

    /// Fixed-point rendering with round-half-even at `dp` decimals.
    pub fn round_dp(&self, dp: u32) -> String {
        let scale = BigInt::from(10).pow(dp);
        let scaled = &self.0 * BigRational::from_integer(scale);
        let floor = scaled.floor();
        let frac = &scaled - &floor;
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let mut n = floor.to_integer();
        match frac.cmp(&half) {
            Ordering::Greater => n += 1,
            Ordering::Equal if n.is_odd() => n += 1,
            _ => {}
        }
        format_fixed(&n, dp as usize)
    }

    /// The value rounded half-even to `dp` decimals, as an amount.
    pub fn rounded(&self, dp: u32) -> Amount {
        Amount::parse(&self.round_dp(dp)).expect("round_dp emits a valid decimal")
    }
}

fn format_fixed(n: &BigInt, digits: usize) -> String {
    let neg = n.is_negative();
    let mut s = n.abs().to_string();
    if digits > 0 {
        if s.len() <= digits {
            s = format!("{}{}", "0".repeat(digits + 1 - s.len()), s);
        }
        s.insert(s.len() - digits, '.');
    }
    if neg {
        s.insert(0, '-');
    }
    s
}

fn parse_decimal(t: &str, base_offset: usize) -> Result<BigRational, AmountParseError> {
    let err = |off: usize| AmountParseError {
        text: t.to_string(),
        offset: base_offset + off,
    };
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let sign_len = t.len() - body.len();
    if body.is_empty() {
        return Err(err(sign_len));
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err(sign_len));
    }
    if let Some(pos) = int_part.find(|c: char| !c.is_ascii_digit()) {
        return Err(err(sign_len + pos));
    }
    if let Some(pos) = frac_part.find(|c: char| !c.is_ascii_digit()) {
        return Err(err(sign_len + int_part.len() + 1 + pos));
    }
    let digits = format!("{int_part}{frac_part}");
    let numer = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).map_err(|_| err(sign_len))?;
    let denom = BigInt::from(10).pow(frac_part.len() as u32);
    let r = BigRational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_exact_string())
    }
}

impl FromStr for Amount {
    type Err = AmountParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Amount::parse(s)
    }
}

impl From<i64> for Amount {
    fn from(n: i64) -> Self {
        Amount::from_int(n)
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident) => {
        impl $tr<Amount> for Amount {
            type Output = Amount;
            fn $m(self, rhs: Amount) -> Amount {
                Amount($tr::$m(self.0, rhs.0))
            }
        }
        impl<'a> $tr<&'a Amount> for &'a Amount {
            type Output = Amount;
            fn $m(self, rhs: &'a Amount) -> Amount {
                Amount($tr::$m(&self.0, &rhs.0))
            }
        }
        impl<'a> $tr<&'a Amount> for Amount {
            type Output = Amount;
            fn $m(self, rhs: &'a Amount) -> Amount {
                Amount($tr::$m(self.0, &rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl AddAssign<&Amount> for Amount {
    fn add_assign(&mut self, rhs: &Amount) {
        self.0 += &rhs.0;
    }
}

impl AddAssign<Amount> for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.fold(Amount::zero(), |acc, x| acc + x)
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_exact_string())
    }
}

struct AmountVisitor;

impl<'de> Visitor<'de> for AmountVisitor {
    type Value = Amount;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a decimal or p/q string, or a JSON number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Amount, E> {
        Amount::parse(v).map_err(E::custom)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Amount, E> {
        Ok(Amount(BigRational::from_integer(BigInt::from(v))))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Amount, E> {
        Ok(Amount::from_int(v))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Amount, E> {
        if !v.is_finite() {
            return Err(E::custom("non-finite number"));
        }
        // shortest round-trip representation, e.g. 0.1 -> "0.1"
        Amount::parse(&format!("{v}")).map_err(E::custom)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Amount, D::Error> {
        d.deserialize_any(AmountVisitor)
    }
}
