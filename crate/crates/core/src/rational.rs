//! Exact rational values for contexts, predictions and outcomes.
//!
//! Calibration buckets condition on exact equality of prediction values, so
//! every value that can end up as a bucket key is a reduced fraction. Sums of
//! many such values are accumulated with [`ExactSum`], which keeps an `i128`
//! numerator over a common denominator that only grows when a new
//! denominator shows up.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// A reduced fraction with positive denominator.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RationalValue(Ratio<i64>);

impl RationalValue {
    pub const ZERO: RationalValue = RationalValue(Ratio::new_raw(0, 1));
    pub const ONE: RationalValue = RationalValue(Ratio::new_raw(1, 1));
    pub const HALF: RationalValue = RationalValue(Ratio::new_raw(1, 2));

    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::ParseRational(format!("{numer}/0")));
        }
        Ok(RationalValue(Ratio::new(numer, denom)))
    }

    pub fn from_integer(n: i64) -> Self {
        RationalValue(Ratio::from_integer(n))
    }

    pub fn from_ratio(r: Ratio<i64>) -> Self {
        RationalValue(r)
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn abs(&self) -> Self {
        RationalValue(self.0.abs())
    }

    pub fn in_unit_interval(&self) -> bool {
        self.numer() >= 0 && self.numer() <= self.denom()
    }

    pub fn ensure_unit_interval(self) -> Result<Self> {
        if self.in_unit_interval() {
            Ok(self)
        } else {
            Err(Error::OutsideUnitInterval(self.to_string()))
        }
    }

    /// Clamp into `[0, 1]`.
    pub fn clamp_unit(self) -> Self {
        if self.numer() < 0 {
            Self::ZERO
        } else if self.numer() > self.denom() {
            Self::ONE
        } else {
            self
        }
    }

    /// Nearest multiple of `1/q`, halves rounding up.
    pub fn round_to_grid(self, q: i64) -> Self {
        // floor(x * q + 1/2) = floor((2 n q + d) / 2d)
        let n = self.numer() as i128;
        let d = self.denom() as i128;
        let k = Integer::div_floor(&(2 * n * q as i128 + d), &(2 * d));
        RationalValue(Ratio::new(k as i64, q))
    }

    /// Largest multiple of `1/denom` not exceeding `x`.
    pub fn floor_from_f64(x: f64, denom: i64) -> Self {
        let k = (x * denom as f64).floor() as i64;
        RationalValue(Ratio::new(k, denom))
    }
}

impl std::ops::Add for RationalValue {
    type Output = RationalValue;
    fn add(self, rhs: Self) -> Self {
        RationalValue(self.0 + rhs.0)
    }
}

impl std::ops::Sub for RationalValue {
    type Output = RationalValue;
    fn sub(self, rhs: Self) -> Self {
        RationalValue(self.0 - rhs.0)
    }
}

impl std::ops::Mul for RationalValue {
    type Output = RationalValue;
    fn mul(self, rhs: Self) -> Self {
        RationalValue(self.0 * rhs.0)
    }
}

impl std::ops::Neg for RationalValue {
    type Output = RationalValue;
    fn neg(self) -> Self {
        RationalValue(-self.0)
    }
}

impl fmt::Display for RationalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for RationalValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for RationalValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::ParseRational(s.to_string());
        match s.split_once('/') {
            Some((n, d)) => {
                let n: i64 = n.trim().parse().map_err(|_| bad())?;
                let d: i64 = d.trim().parse().map_err(|_| bad())?;
                RationalValue::new(n, d)
            }
            None => s.parse::<i64>().map(RationalValue::from_integer).map_err(|_| bad()),
        }
    }
}

/// Exact running sum of rationals.
///
/// The numerator lives over a common denominator `denom`; adding a term
/// whose denominator does not divide `denom` rescales the numerator once.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactSum {
    numer: i128,
    denom: i128,
}

impl Default for ExactSum {
    fn default() -> Self {
        ExactSum { numer: 0, denom: 1 }
    }
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: RationalValue) {
        self.add_scaled(value, 1);
    }

    /// Add `weight * value` for a small integer weight.
    pub fn add_scaled(&mut self, value: RationalValue, weight: i64) {
        let d = value.denom() as i128;
        if self.denom % d != 0 {
            let new_denom = self.denom.lcm(&d);
            self.numer = self
                .numer
                .checked_mul(new_denom / self.denom)
                .expect("exact sum numerator overflow");
            self.denom = new_denom;
        }
        let term = value.numer() as i128 * (self.denom / d) * weight as i128;
        self.numer = self.numer.checked_add(term).expect("exact sum numerator overflow");
    }

    pub fn numer(&self) -> i128 {
        self.numer
    }

    pub fn denom(&self) -> i128 {
        self.denom
    }

    pub fn is_zero(&self) -> bool {
        self.numer == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    pub fn abs_f64(&self) -> f64 {
        self.to_f64().abs()
    }

    pub fn to_ratio(&self) -> Ratio<i128> {
        Ratio::new(self.numer, self.denom)
    }

    /// Rescale so that the denominator is exactly `denom` (which must be a
    /// multiple of the current one).
    pub fn numer_over(&self, denom: i128) -> i128 {
        debug_assert_eq!(denom % self.denom, 0);
        self.numer * (denom / self.denom)
    }
}

/// Least common multiple of the denominators of `values`, as `i128`.
pub fn common_denominator<'a, I: IntoIterator<Item = &'a RationalValue>>(values: I) -> Result<i128> {
    let mut d: i128 = 1;
    for v in values {
        let vd = v.denom() as i128;
        if d % vd != 0 {
            d = d.lcm(&vd);
            if d > i64::MAX as i128 {
                return Err(Error::Overflow(format!("common denominator exceeds i64 ({d})")));
            }
        }
    }
    Ok(d)
}

/// Numerator of `value` over the denominator `denom` (a multiple of its own).
pub fn scaled_numer(value: RationalValue, denom: i128) -> i128 {
    value.numer() as i128 * (denom / value.denom() as i128)
}

pub(crate) fn ratio_i128_to_f64(r: &Ratio<i128>) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> RationalValue {
        RationalValue::new(n, d).unwrap()
    }

    #[test]
    fn reduced_and_ordered() {
        assert_eq!(r(2, 8), r(1, 4));
        assert_eq!(r(3, -6), r(-1, 2));
        assert!(r(5, 12) < r(7, 12));
        assert_eq!(r(6, 8).to_string(), "3/4");
        assert_eq!(r(4, 4).to_string(), "1");
    }

    #[test]
    fn parse_round_trip() {
        for s in ["0", "1", "5/12", "-3/4"] {
            let v: RationalValue = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
        }
        assert!("1/0".parse::<RationalValue>().is_err());
        assert!("x".parse::<RationalValue>().is_err());
    }

    #[test]
    fn rounding_to_grid() {
        assert_eq!(r(13, 25).round_to_grid(10), r(1, 2));
        assert_eq!(r(1, 4).round_to_grid(2), r(1, 2)); // half rounds up
        assert_eq!(r(3, 4).round_to_grid(4), r(3, 4));
        assert_eq!(r(1, 20).round_to_grid(10), r(1, 10));
    }

    #[test]
    fn exact_sum_grows_denominator() {
        let mut s = ExactSum::new();
        s.add(r(1, 2));
        s.add(r(1, 3));
        s.add_scaled(r(1, 6), -1);
        assert_eq!(s.to_ratio(), Ratio::new(2, 3));
        assert_eq!(s.denom(), 6);
    }

    #[test]
    fn unit_interval_guard() {
        assert!(r(3, 2).ensure_unit_interval().is_err());
        assert!(r(-1, 2).ensure_unit_interval().is_err());
        assert!(r(1, 1).ensure_unit_interval().is_ok());
        assert_eq!(r(3, 2).clamp_unit(), RationalValue::ONE);
    }
}
