//! Exact descriptive statistics over rationals.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::units::pow10;

/// Five-number summary plus mean, with linearly interpolated quartiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub count: usize,
    pub min: BigRational,
    pub p25: BigRational,
    pub median: BigRational,
    pub p75: BigRational,
    pub max: BigRational,
    pub mean: BigRational,
}

/// Quantile `q` of sorted values, interpolating linearly between order
/// statistics at position `(n-1)q`.
pub fn quantile(sorted: &[BigRational], q: &BigRational) -> BigRational {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = BigRational::from_integer(BigInt::from(sorted.len() - 1)) * q;
    let lo = h.floor();
    let idx = usize::try_from(lo.to_integer()).expect("index fits usize");
    let frac = h - lo;
    if idx + 1 >= sorted.len() {
        return sorted[sorted.len() - 1].clone();
    }
    &sorted[idx] + frac * (&sorted[idx + 1] - &sorted[idx])
}

pub fn summarize(values: &[BigRational]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort();
    let q = |n: i64, d: i64| quantile(&sorted, &BigRational::new(n.into(), d.into()));
    Some(Summary {
        count: sorted.len(),
        min: sorted[0].clone(),
        p25: q(1, 4),
        median: q(1, 2),
        p75: q(3, 4),
        max: sorted[sorted.len() - 1].clone(),
        mean: mean(&sorted),
    })
}

pub fn mean(values: &[BigRational]) -> BigRational {
    if values.is_empty() {
        return BigRational::zero();
    }
    let sum: BigRational = values.iter().sum();
    sum / BigRational::from_integer(BigInt::from(values.len()))
}

/// Population variance.
pub fn variance(values: &[BigRational]) -> BigRational {
    let m = mean(values);
    let sq: Vec<BigRational> = values.iter().map(|v| (v - &m) * (v - &m)).collect();
    mean(&sq)
}

/// Square root of a non-negative rational, truncated to `digits` fractional
/// digits.
pub fn sqrt_truncated(value: &BigRational, digits: u32) -> BigRational {
    assert!(!value.is_negative(), "square root of a negative value");
    let scale = pow10(digits);
    let scaled = value * BigRational::from_integer(&scale * &scale);
    BigRational::new(scaled.to_integer().sqrt(), scale)
}

/// Population standard deviation, exact to 12 fractional digits.
pub fn std_dev(values: &[BigRational]) -> BigRational {
    sqrt_truncated(&variance(values), 12)
}

/// One step of an empirical CDF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfRow {
    pub value: BigRational,
    pub count: usize,
    /// Percent of observations `<= value`.
    pub cum_pct: BigRational,
}

/// Empirical CDF with one row per distinct value, ascending.
pub fn empirical_cdf(values: &[BigRational]) -> Vec<CdfRow> {
    let mut sorted = values.to_vec();
    sorted.sort();
    let n = BigInt::from(sorted.len());
    let mut rows: Vec<CdfRow> = Vec::new();
    let mut seen = 0usize;
    for v in sorted {
        seen += 1;
        let cum_pct = BigRational::new(BigInt::from(seen) * 100u8, n.clone());
        match rows.last_mut() {
            Some(last) if last.value == v => {
                last.count += 1;
                last.cum_pct = cum_pct;
            }
            _ => rows.push(CdfRow { value: v, count: 1, cum_pct }),
        }
    }
    rows
}

/// Percent of observations `>= threshold`.
pub fn share_at_least(values: &[BigRational], threshold: &BigRational) -> BigRational {
    if values.is_empty() {
        return BigRational::zero();
    }
    let n = values.iter().filter(|v| *v >= threshold).count();
    BigRational::new(BigInt::from(n) * 100u8, BigInt::from(values.len()))
}
