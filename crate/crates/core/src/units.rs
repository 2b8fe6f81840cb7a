//! Exact money units and decimal rendering.
//!
//! Amounts stay integral (wei, satoshi) or exact rationals all the way
//! through the analyses. Decimal strings only appear at the I/O boundary,
//! rendered with round-half-to-even.

use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

/// Wei (Ethereum-style base unit).
pub type Wei = u128;
/// Satoshi (Bitcoin-style base unit).
pub type Sat = u64;

pub const WEI_PER_GWEI: u128 = 1_000_000_000;
pub const WEI_PER_ETH: u128 = 1_000_000_000_000_000_000;

/// Largest supported number of fractional digits in a [`FixedPoint`].
pub const MAX_DECIMALS: u8 = 36;

pub fn pow10(exp: u32) -> BigInt {
    num_traits::pow(BigInt::from(10u8), exp as usize)
}

/// Round `value` to `digits` fractional digits (half-even) and render it.
pub fn format_decimal(value: &BigRational, digits: u32) -> String {
    let scaled = value.abs() * BigRational::from_integer(pow10(digits));
    let (quot, rem) = scaled.numer().div_rem(scaled.denom());
    let twice = rem * 2u8;
    let rounded = match twice.cmp(scaled.denom()) {
        std::cmp::Ordering::Less => quot,
        std::cmp::Ordering::Greater => quot + 1u8,
        std::cmp::Ordering::Equal => {
            if quot.is_even() {
                quot
            } else {
                quot + 1u8
            }
        }
    };
    let negative = value.is_negative() && !rounded.is_zero();
    let mut digits_str = rounded.to_str_radix(10);
    let width = digits as usize + 1;
    if digits_str.len() < width {
        digits_str = format!("{}{}", "0".repeat(width - digits_str.len()), digits_str);
    }
    let split = digits_str.len() - digits as usize;
    let mut out = String::with_capacity(digits_str.len() + 2);
    if negative {
        out.push('-');
    }
    out.push_str(&digits_str[..split]);
    if digits > 0 {
        out.push('.');
        out.push_str(&digits_str[split..]);
    }
    out
}

/// Render a ratio `num / den` as a percentage with two fractional digits.
/// A zero denominator renders as `0.00`.
pub fn format_percent(num: u128, den: u128) -> String {
    if den == 0 {
        return format_decimal(&BigRational::zero(), 2);
    }
    format_decimal(&percent(num, den), 2)
}

pub fn percent(num: u128, den: u128) -> BigRational {
    BigRational::new(BigInt::from(num) * 100u8, BigInt::from(den))
}

pub fn wei_to_gwei(wei: &BigRational) -> BigRational {
    wei / BigRational::from_integer(BigInt::from(WEI_PER_GWEI))
}

/// Wei (possibly fractional, e.g. a per-gas average) as gwei with 9 digits.
pub fn format_gwei(wei: &BigRational) -> String {
    format_decimal(&wei_to_gwei(wei), 9)
}

pub fn format_wei_as_gwei(wei: Wei) -> String {
    format_gwei(&BigRational::from_integer(BigInt::from(wei)))
}

pub fn format_wei_as_eth(wei: Wei, digits: u32) -> String {
    let r = BigRational::new(BigInt::from(wei), BigInt::from(WEI_PER_ETH));
    format_decimal(&r, digits)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid decimal {0:?}")]
pub struct ParseDecimalError(pub String);

/// Parse a plain decimal literal (`12`, `-0.5`, `99.125`) exactly.
pub fn parse_decimal(s: &str) -> Result<BigRational, ParseDecimalError> {
    let err = || ParseDecimalError(s.to_string());
    let t = s.trim();
    let (negative, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let mantissa = BigInt::parse_bytes(digits.as_bytes(), 10).ok_or_else(err)?;
    let mut r = BigRational::new(mantissa, pow10(frac_part.len() as u32));
    if negative {
        r = -r;
    }
    Ok(r)
}

/// Parse a gwei decimal string (at most 9 fractional digits) into wei.
pub fn parse_gwei(s: &str) -> Result<Wei, ParseDecimalError> {
    let r = parse_decimal(s)? * BigRational::from_integer(BigInt::from(WEI_PER_GWEI));
    if !r.is_integer() || r.is_negative() {
        return Err(ParseDecimalError(s.to_string()));
    }
    let (sign, digits) = r.to_integer().to_u64_digits();
    if sign == Sign::Minus || digits.len() > 2 {
        return Err(ParseDecimalError(s.to_string()));
    }
    Ok(digits
        .iter()
        .rev()
        .fold(0u128, |acc, d| (acc << 64) | u128::from(*d)))
}

/// An integer amount with an explicit number of decimals, e.g. a token
/// balance in its smallest unit or an oracle price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPoint {
    pub raw: u128,
    pub decimals: u8,
}

impl FixedPoint {
    pub fn new(raw: u128, decimals: u8) -> Self {
        FixedPoint { raw, decimals }
    }

    pub fn is_valid(&self) -> bool {
        self.decimals <= MAX_DECIMALS
    }

    pub fn to_rational(&self) -> BigRational {
        BigRational::new(BigInt::from(self.raw), pow10(u32::from(self.decimals)))
    }

    pub fn one() -> Self {
        FixedPoint { raw: 1, decimals: 0 }
    }
}

impl fmt::Display for FixedPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_decimal(&self.to_rational(), u32::from(self.decimals)))
    }
}

impl FromStr for FixedPoint {
    type Err = ParseDecimalError;

    /// Parses `1.25` as `raw = 125, decimals = 2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseDecimalError(s.to_string());
        let (i, f) = s.split_once('.').unwrap_or((s, ""));
        if i.is_empty() || f.len() > MAX_DECIMALS as usize {
            return Err(err());
        }
        if !i.bytes().chain(f.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let raw: u128 = format!("{i}{f}").parse().map_err(|_| err())?;
        Ok(FixedPoint::new(raw, f.len() as u8))
    }
}
