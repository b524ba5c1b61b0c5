//! Fixed-point arithmetic for reputation scores and reward amounts.
//!
//! Both types carry six fractional decimal digits. Every validator performs
//! the same integer operations, so results are bit-identical across members.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SCALE: i64 = 1_000_000;
const FRACTION_DIGITS: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseFixedError {
    #[error("empty fixed-point literal")]
    Empty,
    #[error("invalid fixed-point literal `{0}`")]
    Invalid(String),
    #[error("more than {FRACTION_DIGITS} fractional digits in `{0}`")]
    TooPrecise(String),
    #[error("fixed-point literal `{0}` out of range")]
    Overflow(String),
}

/// Signed reputation score in millionths.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Score(i64);

impl Score {
    pub const ZERO: Score = Score(0);
    pub const SCALE: i64 = SCALE;

    pub const fn from_micros(micros: i64) -> Self {
        Score(micros)
    }

    pub const fn from_units(units: i64) -> Self {
        Score(units * SCALE)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    /// Scales the score by a non-negative integer (a transaction value).
    /// Saturates instead of wrapping.
    pub fn times(self, factor: u64) -> Score {
        let product = (self.0 as i128) * (factor as i128);
        Score(product.clamp(i64::MIN as i128, i64::MAX as i128) as i64)
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn max(self, other: Score) -> Score {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Lossy conversion, only used where the algorithm itself is defined
    /// over reals (the `y / r` leader lottery).
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }
}

impl Add for Score {
    type Output = Score;
    fn add(self, rhs: Score) -> Score {
        Score(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for Score {
    fn add_assign(&mut self, rhs: Score) {
        *self = *self + rhs;
    }
}

impl Sub for Score {
    type Output = Score;
    fn sub(self, rhs: Score) -> Score {
        Score(self.0.saturating_sub(rhs.0))
    }
}

impl Neg for Score {
    type Output = Score;
    fn neg(self) -> Score {
        Score(self.0.saturating_neg())
    }
}

impl Sum for Score {
    fn sum<I: Iterator<Item = Score>>(iter: I) -> Score {
        iter.fold(Score::ZERO, |acc, s| acc + s)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(
            f,
            "{sign}{}.{:06}",
            abs / SCALE as u64,
            abs % SCALE as u64
        )
    }
}

impl FromStr for Score {
    type Err = ParseFixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let micros = parse_unsigned_micros(body, s)?;
        let micros = i64::try_from(micros).map_err(|_| ParseFixedError::Overflow(s.into()))?;
        Ok(Score(if negative { -micros } else { micros }))
    }
}

fn parse_unsigned_micros(body: &str, whole: &str) -> Result<u64, ParseFixedError> {
    if body.is_empty() {
        return Err(ParseFixedError::Empty);
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(ParseFixedError::Invalid(whole.into()));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(ParseFixedError::Invalid(whole.into()));
    }
    if frac_part.len() > FRACTION_DIGITS {
        return Err(ParseFixedError::TooPrecise(whole.into()));
    }
    let int: u64 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| ParseFixedError::Overflow(whole.into()))?
    };
    let mut frac: u64 = 0;
    for (i, c) in frac_part.chars().enumerate() {
        frac += (c as u64 - '0' as u64) * 10u64.pow((FRACTION_DIGITS - 1 - i) as u32);
    }
    int.checked_mul(SCALE as u64)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(|| ParseFixedError::Overflow(whole.into()))
}

/// Non-negative currency amount in millionths of a unit (rewards).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Amount(u64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn from_micros(micros: u64) -> Self {
        Amount(micros)
    }

    pub const fn from_units(units: u64) -> Self {
        Amount(units * SCALE as u64)
    }

    pub const fn micros(self) -> u64 {
        self.0
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |acc, a| acc + a)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / SCALE as u64, self.0 % SCALE as u64)
    }
}

impl FromStr for Amount {
    type Err = ParseFixedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_unsigned_micros(s.trim(), s).map(Amount)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_factors_are_exact() {
        assert_eq!("0.1".parse::<Score>().unwrap().micros(), 100_000);
        assert_eq!("-0.5".parse::<Score>().unwrap().micros(), -500_000);
        assert_eq!("-1".parse::<Score>().unwrap(), Score::from_units(-1));
        assert_eq!("0".parse::<Score>().unwrap(), Score::ZERO);
    }

    #[test]
    fn display_round_trips() {
        for micros in [0, 1, -1, 100_000, -3_000_000, 7_500_000, i64::MAX / 2] {
            let s = Score::from_micros(micros);
            assert_eq!(s.to_string().parse::<Score>().unwrap(), s);
        }
        assert_eq!(Score::from_micros(-3_000_000).to_string(), "-3.000000");
    }

    #[test]
    fn rejects_bad_literals() {
        assert!(matches!("".parse::<Score>(), Err(ParseFixedError::Empty)));
        assert!(matches!("1.2345678".parse::<Score>(), Err(ParseFixedError::TooPrecise(_))));
        assert!(matches!("1e3".parse::<Score>(), Err(ParseFixedError::Invalid(_))));
        assert!(matches!(".".parse::<Score>(), Err(ParseFixedError::Invalid(_))));
    }

    #[test]
    fn times_saturates() {
        assert_eq!(Score::from_micros(100_000).times(10), Score::from_units(1));
        assert_eq!(Score::from_units(1).times(u64::MAX).micros(), i64::MAX);
    }
}
