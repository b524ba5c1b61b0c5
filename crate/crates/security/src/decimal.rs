use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// An exact probability.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Probability(pub BigRational);

impl Probability {
    pub fn exact(&self) -> String {
        let r = &self.0;
        if r.denom().is_one() {
            r.numer().to_string()
        } else {
            format!("{}/{}", r.numer(), r.denom())
        }
    }

    /// `%g`-style decimal with `sig` significant digits.
    pub fn render(&self, sig: u32) -> String {
        render_sig(&self.0, sig)
    }

    pub fn to_f64(&self) -> f64 {
        self.render(17).parse().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(6))
    }
}

fn pow10(e: u32) -> BigInt {
    num_traits::pow(BigInt::from(10), e as usize)
}

/// `r · 10^shift`, exact.
fn scale(r: &BigRational, shift: i64) -> BigRational {
    if shift >= 0 {
        r * BigRational::from_integer(pow10(shift as u32))
    } else {
        r / BigRational::from_integer(pow10((-shift) as u32))
    }
}

/// Rounds a non-negative rational to the nearest integer, ties away from
/// zero.
fn round_half_up(r: &BigRational) -> BigInt {
    let two = BigInt::from(2);
    (r.numer() * &two + r.denom()) / (r.denom() * two)
}

/// Formats like C's `%.{sig}g`: scientific when the exponent is below −4
/// or at least `sig`, trailing zeros removed.
pub fn render_sig(value: &BigRational, sig: u32) -> String {
    let sig = sig.max(1);
    if value.is_zero() {
        return "0".into();
    }
    let neg = value.is_negative();
    let r = value.abs();
    // first guess from bit lengths, then correct
    let bits = r.numer().bits() as i64 - r.denom().bits() as i64;
    let mut e = (bits as f64 * std::f64::consts::LOG10_2).floor() as i64;
    let one = BigRational::one();
    let ten = BigRational::from_integer(BigInt::from(10));
    loop {
        let s = scale(&r, -e);
        if s < one {
            e -= 1;
        } else if s >= ten {
            e += 1;
        } else {
            break;
        }
    }
    let mut digits = round_half_up(&scale(&r, sig as i64 - 1 - e));
    if digits >= pow10(sig) {
        digits /= 10;
        e += 1;
    }
    let ds = digits.to_str_radix(10);
    debug_assert_eq!(ds.len(), sig as usize);
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if e < -4 || e >= sig as i64 {
        let (head, tail) = ds.split_at(1);
        let tail = tail.trim_end_matches('0');
        out.push_str(head);
        if !tail.is_empty() {
            out.push('.');
            out.push_str(tail);
        }
        let sign = if e < 0 { '-' } else { '+' };
        out.push_str(&format!("e{sign}{:02}", e.abs()));
    } else if e < 0 {
        out.push_str("0.");
        out.push_str(&"0".repeat((-e - 1) as usize));
        out.push_str(ds.trim_end_matches('0'));
    } else {
        let (int, frac) = ds.split_at(e as usize + 1);
        out.push_str(int);
        let frac = frac.trim_end_matches('0');
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
    }
    out
}
