//! Small helpers around `BigRational`: exact literal parsing, factorials, binomials.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid rational literal `{0}`")]
pub struct RationalParseError(pub String);

/// Parses `p`, `p/q` or a decimal string such as `-0.05` without going through floats.
pub fn parse_rational(text: &str) -> Result<BigRational, RationalParseError> {
    let err = || RationalParseError(text.to_string());
    let s = text.trim();
    if s.is_empty() {
        return Err(err());
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num.trim().parse().map_err(|_| err())?;
        let den: BigInt = den.trim().parse().map_err(|_| err())?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(num, den));
    }
    let (negative, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if !all_digits(int_part) || !all_digits(frac_part) {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let numerator: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| err())?
    };
    let denominator = num_traits::pow(BigInt::from(10u32), frac_part.len());
    let value = BigRational::new(numerator, denominator);
    Ok(if negative { -value } else { value })
}

pub fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

pub fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

pub fn to_rational(n: &BigUint) -> BigRational {
    BigRational::from_integer(BigInt::from(n.clone()))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn pow(base: &BigRational, exp: usize) -> BigRational {
    num_traits::pow(base.clone(), exp)
}

/// Signed integer power, for the occasional `B^{deg q - 2}` with `deg q < 2`.
pub fn powi(base: &BigRational, exp: i64) -> BigRational {
    if exp >= 0 {
        pow(base, exp as usize)
    } else {
        pow(&base.recip(), (-exp) as usize)
    }
}

/// Lossy conversion for reporting; saturates to ±inf for huge values.
pub fn to_f64(x: &BigRational) -> f64 {
    if let Some(v) = x.to_f64() {
        return v;
    }
    // ratio of two huge integers: scale both down by the same power of two
    let bits = x.numer().bits().max(x.denom().bits());
    let shift = bits.saturating_sub(1000);
    let n = (x.numer() >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (x.denom() >> shift).to_f64().unwrap_or(f64::INFINITY);
    n / d
}

/// Decimal string: integers print in full, other values as `p/q`.
pub fn format_rational(x: &BigRational) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn abs(x: &BigRational) -> BigRational {
    x.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("1/10").unwrap(), r(1, 10));
        assert_eq!(parse_rational("-1/4").unwrap(), r(-1, 4));
        assert_eq!(parse_rational("0.05").unwrap(), r(1, 20));
        assert_eq!(parse_rational("-.5").unwrap(), r(-1, 2));
        assert_eq!(parse_rational("3").unwrap(), r(3, 1));
        assert_eq!(parse_rational("2.").unwrap(), r(2, 1));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("1e-3").is_err());
        assert!(parse_rational(".").is_err());
        assert!(parse_rational("").is_err());
    }

    #[test]
    fn binomials_and_factorials() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(3, 4), BigUint::zero());
        assert_eq!(factorial(6), BigUint::from(720u32));
        assert_eq!(powi(&r(2, 1), -2), r(1, 4));
    }

    #[test]
    fn huge_values_convert_to_float() {
        let big = BigRational::new(
            num_traits::pow(BigInt::from(10), 400),
            num_traits::pow(BigInt::from(10), 399),
        );
        assert!((to_f64(&big) - 10.0).abs() < 1e-12);
    }
}
