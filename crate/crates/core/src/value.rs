//! Constants stored in facts and mentioned in queries.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Exact rational used for every numeric column and aggregate value.
pub type Rational = BigRational;

/// A constant from the active domain.
///
/// Opaque constants sort before numbers; within a kind the natural order
/// applies. This is the canonical order used for blocks and repairs.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Str(Arc<str>),
    Num(Rational),
}

impl Value {
    pub fn str(s: &str) -> Self {
        Value::Str(Arc::from(s))
    }

    pub fn int(n: i64) -> Self {
        Value::Num(Rational::from_integer(BigInt::from(n)))
    }

    pub fn as_num(&self) -> Option<&Rational> {
        match self {
            Value::Num(r) => Some(r),
            Value::Str(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s}"),
            Value::Num(r) => write!(f, "{}", format_rational(r)),
        }
    }
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// Parses `12`, `-3`, `0.25`, `1e3` style decimals or `p/q` literals exactly.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = parse_signed_integer(p.trim())?;
        let q: BigInt = parse_signed_integer(q.trim())?;
        if q.is_zero() {
            return None;
        }
        return Some(Rational::new(p, q));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.as_bytes().first()? {
        b'-' => (true, &mantissa[1..]),
        b'+' => (false, &mantissa[1..]),
        _ => (false, mantissa),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let all_digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if all_digits.is_empty() {
        BigInt::zero()
    } else {
        all_digits.parse().ok()?
    };
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        Rational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    if negative {
        value = -value;
    }
    Some(value)
}

fn parse_signed_integer(s: &str) -> Option<BigInt> {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    if body.is_empty() || !body.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Integers print bare, other rationals as `p/q`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Decimal rendering when the expansion terminates, `None` otherwise.
pub fn terminating_decimal(r: &Rational) -> Option<String> {
    if r.is_integer() {
        return Some(r.numer().to_string());
    }
    let mut denom = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0u32, 0u32);
    while (&denom % &two).is_zero() {
        denom /= &two;
        twos += 1;
    }
    while (&denom % &five).is_zero() {
        denom /= &five;
        fives += 1;
    }
    if !denom.is_one() {
        return None;
    }
    let places = twos.max(fives) as usize;
    let scaled = r * Rational::from_integer(num_traits::pow(BigInt::from(10), places));
    debug_assert!(scaled.is_integer());
    let digits = scaled.numer().abs().to_string();
    let padded = format!("{digits:0>width$}", width = places + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - places);
    let sign = if r.is_negative() { "-" } else { "" };
    Some(format!("{sign}{int_part}.{frac_part}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_decimals_and_fractions() {
        assert_eq!(parse_rational("35"), Some(int(35)));
        assert_eq!(parse_rational("-1"), Some(int(-1)));
        assert_eq!(parse_rational("0.25"), Some(rat(1, 4)));
        assert_eq!(parse_rational("3/6"), Some(rat(1, 2)));
        assert_eq!(parse_rational("-2/4"), Some(rat(-1, 2)));
        assert_eq!(parse_rational("1.5e2"), Some(int(150)));
        assert_eq!(parse_rational(".5"), Some(rat(1, 2)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("Boston"), None);
        assert_eq!(parse_rational("1.2.3"), None);
        assert_eq!(parse_rational(""), None);
        assert_eq!(parse_rational("-"), None);
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(terminating_decimal(&rat(1, 4)).as_deref(), Some("0.25"));
        assert_eq!(terminating_decimal(&rat(-3, 2)).as_deref(), Some("-1.5"));
        assert_eq!(terminating_decimal(&int(7)).as_deref(), Some("7"));
        assert_eq!(terminating_decimal(&rat(1, 3)), None);
        assert_eq!(terminating_decimal(&rat(1, 20)).as_deref(), Some("0.05"));
    }

    #[test]
    fn strings_sort_before_numbers() {
        assert!(Value::str("zzz") < Value::int(0));
        assert!(Value::int(-1) < Value::int(0));
    }
}
